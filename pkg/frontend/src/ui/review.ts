/** Job review: volume-vs-frame chart, clinical readout, mesh viewer.
 *
 * The chart renders exactly the values served by the job's volume CSV;
 * no smoothing or re-derivation happens on the client beyond EF, which
 * is computed from the served ED/ES volumes. The mesh viewer is a
 * dependency-free orthographic wireframe with a frame scrubber.
 */

import { clinicalReadout, ClinicalReadout, parseVolumesCsv, VolumePoint } from "../volumes.js";
import { meshBounds, ObjMesh } from "../obj.js";

export interface VolumeCurveModel {
  points: VolumePoint[];
  clinical: ClinicalReadout;
}

/** The single source of truth behind everything the review pane shows. */
export function volumeCurveModel(
  csvText: string,
  edIndex: number,
  esIndex: number,
): VolumeCurveModel {
  const points = parseVolumesCsv(csvText);
  return { points, clinical: clinicalReadout(points, edIndex, esIndex) };
}

export function volumeChartSvg(
  model: VolumeCurveModel,
  edIndex: number,
  esIndex: number,
  width = 420,
  height = 180,
): string {
  const pts = model.points;
  const margin = 28;
  const vmax = Math.max(...pts.map((p) => p.volumeMl));
  const vmin = Math.min(...pts.map((p) => p.volumeMl));
  const span = vmax - vmin || 1;
  const x = (frame: number) =>
    margin + ((width - 2 * margin) * frame) / Math.max(pts.length - 1, 1);
  const y = (v: number) => height - margin - ((height - 2 * margin) * (v - vmin)) / span;
  const path = pts.map((p, i) => `${i === 0 ? "M" : "L"}${x(p.frame).toFixed(1)},${y(p.volumeMl).toFixed(1)}`).join(" ");
  const marker = (idx: number, color: string, tag: string) => {
    const p = pts[idx];
    if (!p) return "";
    return (
      `<circle cx="${x(p.frame).toFixed(1)}" cy="${y(p.volumeMl).toFixed(1)}" r="4" fill="${color}"/>` +
      `<text x="${x(p.frame).toFixed(1)}" y="${(y(p.volumeMl) - 8).toFixed(1)}" fill="${color}" font-size="11" text-anchor="middle">${tag}</text>`
    );
  };
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">` +
    `<rect width="${width}" height="${height}" fill="#0d1117"/>` +
    `<path d="${path}" fill="none" stroke="#58a6ff" stroke-width="1.5"/>` +
    pts.map((p) => `<circle cx="${x(p.frame).toFixed(1)}" cy="${y(p.volumeMl).toFixed(1)}" r="2" fill="#58a6ff"/>`).join("") +
    marker(edIndex, "#3fb950", "ED") +
    marker(esIndex, "#f85149", "ES") +
    `<text x="${margin}" y="14" fill="#8b949e" font-size="11">volume (mL) per frame</text>` +
    `</svg>`
  );
}

export function clinicalSummaryText(c: ClinicalReadout): string {
  return `EDV ${c.edvMl.toFixed(2)} mL | ESV ${c.esvMl.toFixed(2)} mL | EF ${c.efPercent.toFixed(1)}%`;
}

/** Orthographic wireframe viewer with drag-to-orbit. */
export class MeshViewer {
  private readonly canvas: HTMLCanvasElement;
  private readonly ctx: CanvasRenderingContext2D;
  private mesh: ObjMesh | null = null;
  private edges: Array<[number, number]> = [];
  private yaw = 0.7;
  private pitch = -0.5;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    let dragging = false;
    let last: [number, number] = [0, 0];
    canvas.addEventListener("pointerdown", (ev) => {
      dragging = true;
      last = [ev.clientX, ev.clientY];
      canvas.setPointerCapture(ev.pointerId);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      this.yaw += (ev.clientX - last[0]) * 0.01;
      this.pitch += (ev.clientY - last[1]) * 0.01;
      this.pitch = Math.max(-1.5, Math.min(1.5, this.pitch));
      last = [ev.clientX, ev.clientY];
      this.render();
    });
    canvas.addEventListener("pointerup", () => {
      dragging = false;
    });
  }

  setMesh(mesh: ObjMesh): void {
    this.mesh = mesh;
    const seen = new Set<string>();
    this.edges = [];
    for (const f of mesh.faces) {
      const idx = f.map((i) => (i > 0 ? i - 1 : mesh.vertices.length + i));
      for (const [a, b] of [
        [idx[0]!, idx[1]!],
        [idx[1]!, idx[2]!],
        [idx[2]!, idx[0]!],
      ] as const) {
        const key = a < b ? `${a}:${b}` : `${b}:${a}`;
        if (!seen.has(key)) {
          seen.add(key);
          this.edges.push([a, b]);
        }
      }
    }
    this.render();
  }

  render(): void {
    const mesh = this.mesh;
    if (!mesh) return;
    const { center, radius } = meshBounds(mesh);
    const w = this.canvas.width;
    const h = this.canvas.height;
    const scale = (0.45 * Math.min(w, h)) / radius;
    const cy = Math.cos(this.yaw);
    const sy = Math.sin(this.yaw);
    const cp = Math.cos(this.pitch);
    const sp = Math.sin(this.pitch);
    // yaw about world z, pitch about the screen-horizontal axis, then
    // drop the depth coordinate (orthographic).
    const project = (v: [number, number, number]): [number, number] => {
      const x0 = v[0] - center[0];
      const y0 = v[1] - center[1];
      const z0 = v[2] - center[2];
      const x1 = cy * x0 + sy * y0;
      const y1 = -sy * x0 + cy * y0;
      const z1 = sp * y1 + cp * z0;
      return [w / 2 + scale * x1, h / 2 - scale * z1];
    };
    const pts = mesh.vertices.map(project);
    const ctx = this.ctx;
    ctx.clearRect(0, 0, w, h);
    ctx.strokeStyle = "#2ea04366";
    ctx.lineWidth = 0.6;
    ctx.beginPath();
    for (const [a, b] of this.edges) {
      const pa = pts[a]!;
      const pb = pts[b]!;
      ctx.moveTo(pa[0], pa[1]);
      ctx.lineTo(pb[0], pb[1]);
    }
    ctx.stroke();
  }
}
