/** Freehand contour tracing and point editing for one seed label.
 *
 * Drawing: press, drag along the endocardial border, release; the
 * stroke replaces the label's contour. Editing: drag a point handle to
 * move it, alt-click a segment to insert a point, shift-click a handle
 * to delete one. Strokes shorter than the minimum are rejected with an
 * inline message and leave the previous contour untouched.
 */

import { AnnotationDraft, DraftError, SeedLabel } from "../draft.js";
import { PixelPoint } from "../geometry.js";
import { SliceView } from "./sliceView.js";

const MIN_STEP_PX = 0.6;
const HANDLE_RADIUS_PX = 1.8;

export type ContourMode = "draw" | "edit";

export class ContourTool {
  private readonly view: SliceView;
  private readonly draft: AnnotationDraft;
  private readonly onChange: () => void;
  private readonly onError: (message: string) => void;
  private label: SeedLabel | null = null;
  private frame = 0;
  private mode: ContourMode = "draw";
  private stroke: PixelPoint[] | null = null;
  private dragIndex: number | null = null;

  constructor(
    view: SliceView,
    draft: AnnotationDraft,
    onChange: () => void,
    onError: (message: string) => void,
  ) {
    this.view = view;
    this.draft = draft;
    this.onChange = onChange;
    this.onError = onError;
  }

  setTarget(label: SeedLabel, frame: number): void {
    this.label = label;
    this.frame = frame;
  }

  setMode(mode: ContourMode): void {
    this.mode = mode;
  }

  get liveStroke(): PixelPoint[] | null {
    return this.stroke;
  }

  activate(): void {
    this.view.onPointerDown = (px, ev) => this.down(px, ev);
    this.view.onPointerMove = (px) => this.move(px);
    this.view.onPointerUp = () => this.up();
  }

  deactivate(): void {
    this.view.onPointerDown = null;
    this.view.onPointerMove = null;
    this.view.onPointerUp = null;
    this.stroke = null;
    this.dragIndex = null;
  }

  private down(px: PixelPoint, ev: PointerEvent): void {
    if (!this.label) return;
    if (this.mode === "draw") {
      this.stroke = [px];
      this.onChange();
      return;
    }
    const contour = this.draft.contour(this.label);
    if (!contour) return;
    const near = nearestPoint(contour.points, px);
    try {
      if (ev.shiftKey && near !== null && near.dist <= HANDLE_RADIUS_PX) {
        this.draft.deletePoint(this.label, near.index);
        this.onChange();
      } else if (ev.altKey) {
        const seg = nearestSegment(contour.points, px);
        if (seg !== null && seg.dist <= HANDLE_RADIUS_PX) {
          this.draft.insertPoint(this.label, seg.index + 1, px);
          this.onChange();
        }
      } else if (near !== null && near.dist <= HANDLE_RADIUS_PX) {
        this.dragIndex = near.index;
      }
    } catch (err) {
      if (err instanceof DraftError) this.onError(err.message);
      else throw err;
    }
  }

  private move(px: PixelPoint): void {
    if (!this.label) return;
    if (this.mode === "draw" && this.stroke) {
      const last = this.stroke[this.stroke.length - 1]!;
      if (Math.hypot(px.col - last.col, px.row - last.row) >= MIN_STEP_PX) {
        this.stroke.push(px);
        this.onChange();
      }
      return;
    }
    if (this.mode === "edit" && this.dragIndex !== null) {
      try {
        this.draft.movePoint(this.label, this.dragIndex, px);
        this.onChange();
      } catch (err) {
        if (err instanceof DraftError) this.onError(err.message);
        else throw err;
      }
    }
  }

  private up(): void {
    if (!this.label) return;
    if (this.mode === "draw" && this.stroke) {
      const stroke = this.stroke;
      this.stroke = null;
      try {
        this.draft.setContour(this.label, stroke, this.frame, this.view.geometry);
      } catch (err) {
        if (err instanceof DraftError) this.onError(err.message);
        else throw err;
      }
      this.onChange();
      return;
    }
    this.dragIndex = null;
  }
}

function nearestPoint(
  points: readonly PixelPoint[],
  px: PixelPoint,
): { index: number; dist: number } | null {
  let best: { index: number; dist: number } | null = null;
  points.forEach((p, index) => {
    const dist = Math.hypot(p.col - px.col, p.row - px.row);
    if (best === null || dist < best.dist) best = { index, dist };
  });
  return best;
}

function nearestSegment(
  points: readonly PixelPoint[],
  px: PixelPoint,
): { index: number; dist: number } | null {
  let best: { index: number; dist: number } | null = null;
  for (let i = 0; i < points.length - 1; i++) {
    const a = points[i]!;
    const b = points[i + 1]!;
    const vx = b.col - a.col;
    const vy = b.row - a.row;
    const len2 = vx * vx + vy * vy;
    const t = len2 > 0 ? Math.max(0, Math.min(1, ((px.col - a.col) * vx + (px.row - a.row) * vy) / len2)) : 0;
    const dist = Math.hypot(a.col + t * vx - px.col, a.row + t * vy - px.row);
    if (best === null || dist < best.dist) best = { index: i, dist };
  }
  return best;
}
