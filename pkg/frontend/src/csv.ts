import Papa from "papaparse";

import { EmptyReportError, MissingColumnError, Row } from "./types.js";

export function parseCsv(text: string, input: string): Row[] {
    const result = Papa.parse<Row>(text.trim(), {
        header: true,
        skipEmptyLines: true,
    });
    if (result.errors.length > 0) {
        const first = result.errors[0];
        throw new Error(`failed to parse ${input}: ${first.message} (row ${first.row})`);
    }
    return result.data;
}

export function requireColumns(rows: Row[], columns: string[], input: string): void {
    if (rows.length === 0) {
        throw new EmptyReportError(input);
    }
    const present = new Set(Object.keys(rows[0]));
    for (const column of columns) {
        if (!present.has(column)) {
            throw new MissingColumnError(column, input);
        }
    }
}

export function numeric(rows: Row[], column: string): number[] {
    return rows.map((r) => {
        const v = Number(r[column]);
        if (!Number.isFinite(v)) {
            // NaN cells (flagged estimator floors) propagate as NaN and the
            // renderers drop those points explicitly
            return Number.NaN;
        }
        return v;
    });
}
