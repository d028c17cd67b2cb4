#!/usr/bin/env node
/** figs --spec PATH --out DIR: render report figures to SVG files. */
import { renderFigures } from "./index.js";
import { EmptyReportError, MissingColumnError } from "./types.js";

function parseArgs(argv: string[]): { spec?: string; out?: string } {
    const out: { spec?: string; out?: string } = {};
    for (let i = 0; i < argv.length; i += 1) {
        if (argv[i] === "--spec") out.spec = argv[++i];
        else if (argv[i] === "--out") out.out = argv[++i];
        else {
            console.error(`unknown argument: ${argv[i]}`);
            process.exit(2);
        }
    }
    return out;
}

const args = parseArgs(process.argv.slice(2));
if (!args.spec || !args.out) {
    console.error("usage: figs --spec PATH --out DIR");
    process.exit(2);
}

try {
    const results = renderFigures(args.spec, args.out);
    for (const r of results) {
        console.log(`${r.spec.kind} -> ${r.path}`);
    }
} catch (err) {
    if (err instanceof MissingColumnError || err instanceof EmptyReportError) {
        console.error(err.message);
        process.exit(3);
    }
    console.error(err instanceof Error ? err.message : String(err));
    process.exit(1);
}
