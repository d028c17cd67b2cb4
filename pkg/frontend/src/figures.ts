import { numeric, requireColumns } from "./csv.js";
import {
    defaultFrame,
    extent,
    heatColor,
    linearScale,
    logScale,
    SvgDoc,
} from "./svg.js";
import { FigureSpec, REQUIRED_COLUMNS, Row } from "./types.js";

function hashes(rows: Row[]): string[] {
    return [...new Set(rows.map((r) => r.config_hash))].sort();
}

function startDoc(spec: FigureSpec, rows: Row[], fallbackTitle: string): SvgDoc {
    const frame = defaultFrame(spec.style.width, spec.style.height);
    const doc = new SvgDoc(frame, spec.style.title ?? fallbackTitle, hashes(rows));
    return doc;
}

function finishDoc(doc: SvgDoc, rows: Row[]): string {
    doc.caption(`config ${hashes(rows).join(", ")}`);
    return doc.render();
}

/** Median decay along the epsilon sweep with an interquartile band. */
export function renderConvergence(spec: FigureSpec, rows: Row[]): string {
    requireColumns(rows, REQUIRED_COLUMNS.convergence, spec.input);
    const eps = numeric(rows, "epsilon");
    const med = numeric(rows, "median");
    const q25 = numeric(rows, "q25");
    const q75 = numeric(rows, "q75");
    const order = eps.map((_, i) => i).sort((a, b) => eps[b] - eps[a]);
    const ex = [...order.map((i) => eps[i])];
    const doc = startDoc(spec, rows, "zero-noise convergence");
    const a = doc.plotArea();
    const xs = logScale(extent(ex), [a.x0, a.x1]);
    const ylo = Math.min(...order.map((i) => q25[i]).filter((v) => v > 0), ...order.map((i) => med[i]).filter((v) => v > 0));
    const yhi = Math.max(...order.map((i) => q75[i]), ...order.map((i) => med[i]));
    const ys = logScale([ylo > 0 ? ylo : 1e-12, yhi], [a.y0, a.y1]);
    doc.band(
        order.map((i) => xs(eps[i])),
        order.map((i) => ys(Math.max(q75[i], ylo))),
        order.map((i) => ys(Math.max(q25[i], ylo))),
        spec.style.band,
    );
    doc.polyline(order.map((i) => xs(eps[i])), order.map((i) => ys(med[i])), spec.style.stroke);
    for (const i of order) doc.marker(xs(eps[i]), ys(med[i]), spec.style.stroke);
    doc.axes(xs, ys, "epsilon", "distance to reference");
    return finishDoc(doc, rows);
}

/** eps^2 log p-hat against epsilon, exactly as reported (no re-transform). */
export function renderLdpSpeed(spec: FigureSpec, rows: Row[]): string {
    requireColumns(rows, REQUIRED_COLUMNS.ldp_speed, spec.input);
    const eps = numeric(rows, "epsilon");
    const y = numeric(rows, "eps2_log_p");
    const keep = y.map((v, i) => [eps[i], v] as const).filter(([, v]) => Number.isFinite(v));
    const doc = startDoc(spec, rows, "tail probability speed");
    const a = doc.plotArea();
    const xvals = keep.map(([e]) => e);
    const yvals = keep.map(([, v]) => v);
    const xs = linearScale(extent(eps), [a.x0, a.x1]);
    const ys = linearScale(extent(yvals.length ? yvals : [-1, 0]), [a.y0, a.y1]);
    const order = keep.map((_, i) => i).sort((p, q) => xvals[q] - xvals[p]);
    doc.polyline(order.map((i) => xs(xvals[i])), order.map((i) => ys(yvals[i])), spec.style.stroke);
    for (const i of order) doc.marker(xs(xvals[i]), ys(yvals[i]), spec.style.stroke);
    // rows dropped as estimator floors are marked on the x axis
    for (let i = 0; i < eps.length; i += 1) {
        if (!Number.isFinite(y[i])) {
            doc.push(`<text x="${xs(eps[i])}" y="${a.y0 - 6}" text-anchor="middle" font-family="sans-serif" font-size="10" fill="#a33">floor</text>`);
        }
    }
    doc.axes(xs, ys, "epsilon", "eps^2 log p");
    return finishDoc(doc, rows);
}

/** Shell-summed spectral energy on log-log axes. */
export function renderSpectrum(spec: FigureSpec, rows: Row[]): string {
    requireColumns(rows, REQUIRED_COLUMNS.spectrum, spec.input);
    const k = numeric(rows, "kmag");
    const e = numeric(rows, "energy");
    const pts = k
        .map((kk, i) => [kk, e[i]] as const)
        .filter(([kk, ee]) => kk > 0 && ee > 0)
        .sort((a, b) => a[0] - b[0]);
    const doc = startDoc(spec, rows, "energy spectrum");
    const a = doc.plotArea();
    const xs = logScale(extent(pts.map(([kk]) => kk)), [a.x0, a.x1]);
    const ys = logScale(extent(pts.map(([, ee]) => ee)), [a.y0, a.y1]);
    doc.polyline(pts.map(([kk]) => xs(kk)), pts.map(([, ee]) => ys(ee)), spec.style.stroke);
    for (const [kk, ee] of pts) doc.marker(xs(kk), ys(ee), spec.style.stroke);
    doc.axes(xs, ys, "|k|", "shell energy");
    return finishDoc(doc, rows);
}

/** Space-time dissipation cells, summed over time bins into one heat map. */
export function renderDissipationMap(spec: FigureSpec, rows: Row[]): string {
    requireColumns(rows, REQUIRED_COLUMNS.dissipation_map, spec.input);
    const bx = numeric(rows, "x0_block");
    const by = numeric(rows, "x1_block");
    const val = numeric(rows, "value");
    const nx = Math.max(...bx) + 1;
    const ny = Math.max(...by) + 1;
    const acc: number[][] = Array.from({ length: nx }, () => Array(ny).fill(0));
    for (let i = 0; i < rows.length; i += 1) acc[bx[i]][by[i]] += val[i];
    const flat = acc.flat();
    const vmax = Math.max(...flat.map(Math.abs));
    const doc = startDoc(spec, rows, "dissipation density");
    const a = doc.plotArea();
    const w = (a.x1 - a.x0) / nx;
    const h = (a.y0 - a.y1) / ny;
    for (let i = 0; i < nx; i += 1) {
        for (let j = 0; j < ny; j += 1) {
            const t = vmax > 0 ? acc[i][j] / vmax : 0;
            doc.rect(a.x0 + i * w, a.y0 - (j + 1) * h, w, h, heatColor(t));
        }
    }
    doc.push(
        `<g stroke="#444" fill="none"><rect x="${a.x0}" y="${a.y1}" width="${a.x1 - a.x0}" height="${a.y0 - a.y1}"/></g>`,
    );
    doc.push(
        `<text x="${(a.x0 + a.x1) / 2}" y="${doc.frame.height - 12}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="#222">spatial blocks (time-integrated)</text>`,
    );
    return finishDoc(doc, rows);
}

/** Norm time series from the energy ledger, one line per quantity. */
export function renderEnergyLedger(spec: FigureSpec, rows: Row[]): string {
    requireColumns(rows, REQUIRED_COLUMNS.energy_ledger, spec.input);
    const times = numeric(rows, "time");
    const values = numeric(rows, "value");
    const quantities = [...new Set(rows.map((r) => r.quantity))].sort();
    const palette = ["#1f6fb2", "#c2492e", "#3e8e41", "#8e5aa2", "#a07f1a", "#3aa6a6"];
    const doc = startDoc(spec, rows, "energy ledger");
    const a = doc.plotArea();
    const xs = linearScale(extent(times), [a.x0, a.x1]);
    const ys = linearScale(extent(values), [a.y0, a.y1]);
    quantities.forEach((q, qi) => {
        const idx = rows.map((_, i) => i).filter((i) => rows[i].quantity === q);
        idx.sort((p, r) => times[p] - times[r]);
        doc.polyline(idx.map((i) => xs(times[i])), idx.map((i) => ys(values[i])), palette[qi % palette.length]);
        doc.push(
            `<text x="${a.x1 - 4}" y="${a.y1 + 14 + 14 * qi}" text-anchor="end" font-family="sans-serif" font-size="11" fill="${palette[qi % palette.length]}">${q}</text>`,
        );
    });
    doc.axes(xs, ys, "time", "value");
    return finishDoc(doc, rows);
}

export const RENDERERS: Record<string, (spec: FigureSpec, rows: Row[]) => string> = {
    convergence: renderConvergence,
    ldp_speed: renderLdpSpeed,
    spectrum: renderSpectrum,
    dissipation_map: renderDissipationMap,
    energy_ledger: renderEnergyLedger,
};
