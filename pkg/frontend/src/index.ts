import { readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { dirname, join, resolve } from "node:path";

import { parseCsv } from "./csv.js";
import { RENDERERS } from "./figures.js";
import { FigureSpec, SpecFileSchema } from "./types.js";

export { RENDERERS } from "./figures.js";
export * from "./types.js";

export interface RenderResult {
    spec: FigureSpec;
    path: string;
}

/** Render one figure spec to an SVG string (pure; never mutates inputs). */
export function renderFigure(spec: FigureSpec, baseDir = "."): string {
    const inputPath = resolve(baseDir, spec.input);
    const rows = parseCsv(readFileSync(inputPath, "utf8"), spec.input);
    const renderer = RENDERERS[spec.kind];
    return renderer(spec, rows);
}

export function loadSpecs(specPath: string): FigureSpec[] {
    const raw = JSON.parse(readFileSync(specPath, "utf8"));
    return SpecFileSchema.parse(raw);
}

export function renderFigures(specPath: string, outDir: string): RenderResult[] {
    const specs = loadSpecs(specPath);
    const baseDir = dirname(resolve(specPath));
    mkdirSync(outDir, { recursive: true });
    const results: RenderResult[] = [];
    for (const spec of specs) {
        const svg = renderFigure(spec, baseDir);
        const outPath = join(outDir, spec.output);
        writeFileSync(outPath, svg);
        results.push({ spec, path: outPath });
    }
    return results;
}
