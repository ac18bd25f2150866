/** Canvas slice viewer with annotation overlays.
 *
 * The canvas backing store matches the slice pixel grid one-to-one and
 * is scaled up with CSS (`image-rendering: pixelated`), so overlay
 * drawing and pointer handling both work directly in image pixel
 * coordinates. World-mm overlays (axis picks, contours from other
 * slices) are projected onto the current plane with the slice geometry.
 */

import { SliceImage } from "../api.js";
import { mmToPx, PixelPoint, SliceGeometry, Vec3 } from "../geometry.js";

export interface OverlayContour {
  pointsMm: Vec3[];
  color: string;
  /** Index of the point handle being edited, if any. */
  activeIndex?: number;
  showHandles?: boolean;
}

export interface OverlayState {
  apexMm?: Vec3;
  baseMm?: Vec3;
  contours: OverlayContour[];
  /** Free-floating polyline in image px, used for live stroke preview. */
  strokePx?: PixelPoint[];
}

export type PointerHandler = (px: PixelPoint, ev: PointerEvent) => void;

const APEX_COLOR = "#3fb950";
const BASE_COLOR = "#58a6ff";
const AXIS_COLOR = "#d29922";

export class SliceView {
  private readonly canvas: HTMLCanvasElement;
  private readonly ctx: CanvasRenderingContext2D;
  private bitmap: ImageBitmap | null = null;
  private _geometry: SliceGeometry | null = null;
  private overlay: OverlayState = { contours: [] };

  onPointerDown: PointerHandler | null = null;
  onPointerMove: PointerHandler | null = null;
  onPointerUp: PointerHandler | null = null;

  constructor(canvas: HTMLCanvasElement, displayScale = 6) {
    this.canvas = canvas;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    canvas.style.imageRendering = "pixelated";
    canvas.dataset.displayScale = String(displayScale);
    canvas.addEventListener("pointerdown", (ev) => {
      canvas.setPointerCapture(ev.pointerId);
      this.onPointerDown?.(this.toImagePx(ev), ev);
    });
    canvas.addEventListener("pointermove", (ev) => this.onPointerMove?.(this.toImagePx(ev), ev));
    canvas.addEventListener("pointerup", (ev) => this.onPointerUp?.(this.toImagePx(ev), ev));
  }

  get geometry(): SliceGeometry {
    if (!this._geometry) throw new Error("no slice loaded");
    return this._geometry;
  }

  async showSlice(slice: SliceImage): Promise<void> {
    const blob = new Blob([slice.bytes.slice().buffer], { type: slice.contentType });
    const bitmap = await createImageBitmap(blob);
    this.bitmap?.close();
    this.bitmap = bitmap;
    this._geometry = slice.geometry;
    const scale = Number(this.canvas.dataset.displayScale ?? 6);
    this.canvas.width = slice.geometry.widthPx;
    this.canvas.height = slice.geometry.heightPx;
    this.canvas.style.width = `${slice.geometry.widthPx * scale}px`;
    this.canvas.style.height = `${slice.geometry.heightPx * scale}px`;
    this.redraw();
  }

  setOverlay(overlay: OverlayState): void {
    this.overlay = overlay;
    this.redraw();
  }

  toImagePx(ev: PointerEvent): PixelPoint {
    const rect = this.canvas.getBoundingClientRect();
    return {
      col: ((ev.clientX - rect.left) / rect.width) * this.canvas.width - 0.5,
      row: ((ev.clientY - rect.top) / rect.height) * this.canvas.height - 0.5,
    };
  }

  redraw(): void {
    if (!this.bitmap || !this._geometry) return;
    const g = this._geometry;
    const ctx = this.ctx;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.drawImage(this.bitmap, 0, 0);

    ctx.lineWidth = 0.4;
    const apexPx = this.overlay.apexMm ? mmToPx(g, this.overlay.apexMm) : null;
    const basePx = this.overlay.baseMm ? mmToPx(g, this.overlay.baseMm) : null;
    if (apexPx && basePx) {
      ctx.strokeStyle = AXIS_COLOR;
      ctx.beginPath();
      ctx.moveTo(apexPx.col + 0.5, apexPx.row + 0.5);
      ctx.lineTo(basePx.col + 0.5, basePx.row + 0.5);
      ctx.stroke();
    }
    if (apexPx) this.drawMarker(apexPx, APEX_COLOR);
    if (basePx) this.drawMarker(basePx, BASE_COLOR);

    for (const contour of this.overlay.contours) {
      const pts = contour.pointsMm.map((p) => mmToPx(g, p));
      this.drawPolyline(pts, contour.color);
      if (contour.showHandles) {
        pts.forEach((p, i) =>
          this.drawMarker(p, i === contour.activeIndex ? "#ff7b72" : contour.color, 0.9),
        );
      }
    }
    if (this.overlay.strokePx && this.overlay.strokePx.length > 1) {
      this.drawPolyline(this.overlay.strokePx, "#ff7b72");
    }
  }

  private drawPolyline(pts: PixelPoint[], color: string): void {
    if (pts.length < 2) return;
    const ctx = this.ctx;
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(pts[0]!.col + 0.5, pts[0]!.row + 0.5);
    for (const p of pts.slice(1)) ctx.lineTo(p.col + 0.5, p.row + 0.5);
    ctx.stroke();
  }

  private drawMarker(px: PixelPoint, color: string, r = 1.4): void {
    const ctx = this.ctx;
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(px.col + 0.5, px.row + 0.5, r, 0, 2 * Math.PI);
    ctx.fill();
  }
}
