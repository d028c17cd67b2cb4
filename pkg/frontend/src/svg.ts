/** Deterministic, dependency-free SVG assembly for the report figures. */

export interface Frame {
    width: number;
    height: number;
    margin: { top: number; right: number; bottom: number; left: number };
}

export function defaultFrame(width: number, height: number): Frame {
    return { width, height, margin: { top: 42, right: 20, bottom: 56, left: 64 } };
}

export function fmt(x: number): string {
    if (!Number.isFinite(x)) return "0";
    const s = x.toPrecision(7);
    return s.includes(".") ? s.replace(/\.?0+($|e)/, "$1") : s;
}

export interface Scale {
    (value: number): number;
    domain: [number, number];
    kind: "linear" | "log";
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
    const [d0, d1] = domain;
    const [r0, r1] = range;
    const span = d1 - d0 || 1;
    const fn = ((v: number) => r0 + ((v - d0) / span) * (r1 - r0)) as Scale;
    fn.domain = domain;
    fn.kind = "linear";
    return fn;
}

export function logScale(domain: [number, number], range: [number, number]): Scale {
    const lo = Math.log10(domain[0]);
    const hi = Math.log10(domain[1]);
    const span = hi - lo || 1;
    const [r0, r1] = range;
    const fn = ((v: number) => r0 + ((Math.log10(v) - lo) / span) * (r1 - r0)) as Scale;
    fn.domain = domain;
    fn.kind = "log";
    return fn;
}

export function extent(values: number[]): [number, number] {
    const finite = values.filter(Number.isFinite);
    let lo = Math.min(...finite);
    let hi = Math.max(...finite);
    if (!Number.isFinite(lo) || !Number.isFinite(hi)) {
        lo = 0;
        hi = 1;
    }
    if (lo === hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    return [lo, hi];
}

export function ticks(domain: [number, number], count = 5): number[] {
    const [lo, hi] = domain;
    const span = hi - lo;
    const step = Math.pow(10, Math.floor(Math.log10(span / count)));
    const err = (span / count) / step;
    const refined = err >= 7.5 ? step * 10 : err >= 3.5 ? step * 5 : err >= 1.5 ? step * 2 : step;
    const start = Math.ceil(lo / refined) * refined;
    const out: number[] = [];
    for (let v = start; v <= hi + 1e-12 * Math.abs(span); v += refined) {
        out.push(Number(v.toPrecision(12)));
    }
    return out;
}

export function logTicks(domain: [number, number]): number[] {
    const lo = Math.ceil(Math.log10(domain[0]) - 1e-9);
    const hi = Math.floor(Math.log10(domain[1]) + 1e-9);
    const out: number[] = [];
    for (let e = lo; e <= hi; e += 1) out.push(Math.pow(10, e));
    if (out.length === 0) out.push(domain[0], domain[1]);
    return out;
}

export class SvgDoc {
    private parts: string[] = [];

    constructor(public frame: Frame, title: string, configHashes: string[]) {
        const { width, height } = frame;
        this.parts.push(
            `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`,
            `<metadata>config_hash=${configHashes.join(",")}</metadata>`,
            `<rect x="0" y="0" width="${width}" height="${height}" fill="#ffffff"/>`,
            `<text x="${frame.margin.left}" y="24" font-family="sans-serif" font-size="15" fill="#222">${escapeXml(title)}</text>`,
        );
    }

    plotArea(): { x0: number; x1: number; y0: number; y1: number } {
        const { width, height, margin } = this.frame;
        return { x0: margin.left, x1: width - margin.right, y0: height - margin.bottom, y1: margin.top };
    }

    push(fragment: string): void {
        this.parts.push(fragment);
    }

    axes(xscale: Scale, yscale: Scale, xlabel: string, ylabel: string): void {
        const a = this.plotArea();
        this.push(
            `<g stroke="#444" stroke-width="1">` +
            `<line x1="${a.x0}" y1="${a.y0}" x2="${a.x1}" y2="${a.y0}"/>` +
            `<line x1="${a.x0}" y1="${a.y0}" x2="${a.x0}" y2="${a.y1}"/>` +
            `</g>`,
        );
        const xticks = xscale.kind === "log" ? logTicks(xscale.domain) : ticks(xscale.domain);
        const yticks = yscale.kind === "log" ? logTicks(yscale.domain) : ticks(yscale.domain);
        const tickParts: string[] = ['<g font-family="sans-serif" font-size="11" fill="#333">'];
        for (const t of xticks) {
            const x = xscale(t);
            tickParts.push(
                `<line x1="${fmt(x)}" y1="${a.y0}" x2="${fmt(x)}" y2="${a.y0 + 5}" stroke="#444"/>`,
                `<text x="${fmt(x)}" y="${a.y0 + 18}" text-anchor="middle">${fmt(t)}</text>`,
            );
        }
        for (const t of yticks) {
            const y = yscale(t);
            tickParts.push(
                `<line x1="${a.x0 - 5}" y1="${fmt(y)}" x2="${a.x0}" y2="${fmt(y)}" stroke="#444"/>`,
                `<text x="${a.x0 - 8}" y="${fmt(y + 4)}" text-anchor="end">${fmt(t)}</text>`,
            );
        }
        tickParts.push("</g>");
        this.push(tickParts.join(""));
        const midX = (a.x0 + a.x1) / 2;
        const midY = (a.y0 + a.y1) / 2;
        this.push(
            `<text x="${midX}" y="${this.frame.height - 12}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="#222">${escapeXml(xlabel)}</text>`,
        );
        this.push(
            `<text x="16" y="${midY}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="#222" transform="rotate(-90 16 ${midY})">${escapeXml(ylabel)}</text>`,
        );
    }

    polyline(xs: number[], ys: number[], stroke: string, width = 1.8): void {
        const pts: string[] = [];
        for (let i = 0; i < xs.length; i += 1) {
            if (Number.isFinite(xs[i]) && Number.isFinite(ys[i])) {
                pts.push(`${fmt(xs[i])},${fmt(ys[i])}`);
            }
        }
        this.push(`<polyline points="${pts.join(" ")}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`);
    }

    band(xs: number[], upper: number[], lower: number[], fill: string): void {
        const fwd = xs.map((x, i) => `${fmt(x)},${fmt(upper[i])}`);
        const bwd = xs.map((x, i) => `${fmt(x)},${fmt(lower[i])}`).reverse();
        this.push(`<polygon points="${[...fwd, ...bwd].join(" ")}" fill="${fill}" fill-opacity="0.45" stroke="none"/>`);
    }

    marker(x: number, y: number, stroke: string): void {
        this.push(`<circle cx="${fmt(x)}" cy="${fmt(y)}" r="3" fill="${stroke}"/>`);
    }

    rect(x: number, y: number, w: number, h: number, fill: string): void {
        this.push(`<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" fill="${fill}"/>`);
    }

    caption(text: string): void {
        const a = this.plotArea();
        this.push(
            `<g class="caption"><text x="${a.x0}" y="${this.frame.height - 30}" font-family="monospace" font-size="10" fill="#555">${escapeXml(text)}</text></g>`,
        );
    }

    render(): string {
        return [...this.parts, "</svg>"].join("\n") + "\n";
    }
}

export function escapeXml(s: string): string {
    return s
        .replaceAll("&", "&amp;")
        .replaceAll("<", "&lt;")
        .replaceAll(">", "&gt;")
        .replaceAll('"', "&quot;");
}

/** White-to-blue ramp; t in [0,1]. */
export function heatColor(t: number): string {
    const clamped = Math.max(0, Math.min(1, t));
    const r = Math.round(255 - 200 * clamped);
    const g = Math.round(255 - 150 * clamped);
    const b = Math.round(255 - 60 * clamped);
    return `rgb(${r},${g},${b})`;
}
