import { z } from "zod";

export const FIGURE_KINDS = [
    "convergence",
    "ldp_speed",
    "spectrum",
    "dissipation_map",
    "energy_ledger",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export const StyleSchema = z
    .object({
        width: z.number().int().positive().default(640),
        height: z.number().int().positive().default(420),
        stroke: z.string().default("#1f6fb2"),
        band: z.string().default("#9ecbe8"),
        title: z.string().optional(),
    })
    .default({});

export const FigureSpecSchema = z.object({
    input: z.string(),
    kind: z.enum(FIGURE_KINDS),
    output: z.string(),
    style: StyleSchema,
});

export const SpecFileSchema = z.array(FigureSpecSchema).min(1);

export type FigureSpec = z.infer<typeof FigureSpecSchema>;

export type Row = Record<string, string>;

/** Columns each figure kind reads from its report table. */
export const REQUIRED_COLUMNS: Record<FigureKind, string[]> = {
    convergence: ["epsilon", "median", "q25", "q75", "config_hash"],
    ldp_speed: ["epsilon", "eps2_log_p", "config_hash"],
    spectrum: ["kmag", "energy", "config_hash"],
    dissipation_map: ["t_bin", "x0_block", "x1_block", "value", "config_hash"],
    energy_ledger: ["time", "quantity", "value", "config_hash"],
};

export class MissingColumnError extends Error {
    constructor(public readonly column: string, public readonly input: string) {
        super(`input ${input} is missing required column "${column}"`);
        this.name = "MissingColumnError";
    }
}

export class EmptyReportError extends Error {
    constructor(public readonly input: string) {
        super(`input ${input} has no data rows; refusing to render a blank figure`);
        this.name = "EmptyReportError";
    }
}
