/** Annotation draft: the client-side state a user builds before submit.
 *
 * The draft stores everything in slice pixel coordinates together with
 * the geometry of the slice each point was placed on, so it can be
 * rendered back onto the viewer at any time and converted to world mm
 * only when the payload is built. Submission is enabled once the apex,
 * the base, and all four seed contours with at least MIN_DRAFT_POINTS
 * points each exist; strokes shorter than MIN_STROKE_POINTS are rejected
 * at draw time. Drafts serialize to JSON and survive page reloads via
 * any Storage-like backend.
 */

import { AnnotationPayload } from "./api.js";
import { insideImage, PixelPoint, pxToMm, SliceGeometry, Vec3 } from "./geometry.js";

export type Phase = "ED" | "ES";
export type SeedAngle = 0 | 90;

export interface SeedLabel {
  readonly phase: Phase;
  readonly angleDeg: SeedAngle;
}

export const SEED_LABELS: readonly SeedLabel[] = [
  { phase: "ED", angleDeg: 0 },
  { phase: "ED", angleDeg: 90 },
  { phase: "ES", angleDeg: 0 },
  { phase: "ES", angleDeg: 90 },
];

export const MIN_STROKE_POINTS = 3;
export const MIN_DRAFT_POINTS = 8;
export const SUBMIT_CONTOUR_POINTS = 48;

export function labelKey(label: SeedLabel): string {
  return `${label.phase}:${label.angleDeg}`;
}

export class DraftError extends Error {
  readonly code: "outside_image" | "stroke_too_short" | "incomplete" | "bad_stored_draft";

  constructor(code: DraftError["code"], message: string) {
    super(message);
    this.name = "DraftError";
    this.code = code;
  }
}

export interface AxisPick {
  readonly px: PixelPoint;
  readonly frame: number;
  readonly geometry: SliceGeometry;
}

export interface ContourDraft {
  readonly label: SeedLabel;
  readonly frame: number;
  readonly geometry: SliceGeometry;
  points: PixelPoint[];
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

interface DraftJson {
  version: 1;
  studyId: string;
  apex: AxisPick | null;
  base: AxisPick | null;
  contours: ContourDraft[];
}

function checkInside(g: SliceGeometry, px: PixelPoint): void {
  if (!insideImage(g, px)) {
    throw new DraftError(
      "outside_image",
      `pick (${px.col.toFixed(1)}, ${px.row.toFixed(1)}) is outside the ${g.widthPx}x${g.heightPx} slice`,
    );
  }
}

/** Resample an open polyline to k points uniform in arc length. */
export function resamplePolyline(points: readonly Vec3[], k: number): Vec3[] {
  if (points.length < 2) throw new DraftError("incomplete", "polyline needs at least 2 points");
  const cum: number[] = [0];
  for (let i = 1; i < points.length; i++) {
    const a = points[i - 1]!;
    const b = points[i]!;
    cum.push(cum[i - 1]! + Math.hypot(b[0] - a[0], b[1] - a[1], b[2] - a[2]));
  }
  const total = cum[cum.length - 1]!;
  if (!(total > 0)) throw new DraftError("incomplete", "polyline has zero length");
  const out: Vec3[] = [];
  let seg = 0;
  for (let j = 0; j < k; j++) {
    const s = (total * j) / (k - 1);
    while (seg < points.length - 2 && cum[seg + 1]! < s) seg++;
    const span = cum[seg + 1]! - cum[seg]!;
    const w = span > 0 ? (s - cum[seg]!) / span : 0;
    const a = points[seg]!;
    const b = points[seg + 1]!;
    out.push([
      a[0] + w * (b[0] - a[0]),
      a[1] + w * (b[1] - a[1]),
      a[2] + w * (b[2] - a[2]),
    ]);
  }
  return out;
}

export class AnnotationDraft {
  readonly studyId: string;
  apex: AxisPick | null = null;
  base: AxisPick | null = null;
  private readonly contours = new Map<string, ContourDraft>();

  constructor(studyId: string) {
    this.studyId = studyId;
  }

  /** First pick lands the apex, the second the base; an explicit target
   * re-picks that endpoint and leaves the other alone. */
  placeAxisPick(
    px: PixelPoint,
    frame: number,
    geometry: SliceGeometry,
    target?: "apex" | "base",
  ): "apex" | "base" {
    checkInside(geometry, px);
    const slot = target ?? (this.apex === null ? "apex" : "base");
    const pick: AxisPick = { px, frame, geometry };
    if (slot === "apex") this.apex = pick;
    else this.base = pick;
    return slot;
  }

  /** Replace the whole stroke for one seed label. */
  setContour(
    label: SeedLabel,
    points: readonly PixelPoint[],
    frame: number,
    geometry: SliceGeometry,
  ): void {
    if (points.length < MIN_STROKE_POINTS) {
      throw new DraftError(
        "stroke_too_short",
        `contour (${label.phase}, ${label.angleDeg}) has ${points.length} points, need >= ${MIN_STROKE_POINTS}`,
      );
    }
    for (const p of points) checkInside(geometry, p);
    this.contours.set(labelKey(label), { label, frame, geometry, points: [...points] });
  }

  contour(label: SeedLabel): ContourDraft | null {
    return this.contours.get(labelKey(label)) ?? null;
  }

  clearContour(label: SeedLabel): void {
    this.contours.delete(labelKey(label));
  }

  movePoint(label: SeedLabel, index: number, px: PixelPoint): void {
    const c = this.requireContour(label, index);
    checkInside(c.geometry, px);
    c.points[index] = px;
  }

  insertPoint(label: SeedLabel, index: number, px: PixelPoint): void {
    const c = this.contours.get(labelKey(label));
    if (!c || index < 0 || index > c.points.length) {
      throw new RangeError(`no insert slot ${index} on contour ${labelKey(label)}`);
    }
    checkInside(c.geometry, px);
    c.points.splice(index, 0, px);
  }

  deletePoint(label: SeedLabel, index: number): void {
    const c = this.requireContour(label, index);
    if (c.points.length <= MIN_STROKE_POINTS) {
      throw new DraftError(
        "stroke_too_short",
        `contour (${label.phase}, ${label.angleDeg}) cannot drop below ${MIN_STROKE_POINTS} points`,
      );
    }
    c.points.splice(index, 1);
  }

  private requireContour(label: SeedLabel, index: number): ContourDraft {
    const c = this.contours.get(labelKey(label));
    if (!c || index < 0 || index >= c.points.length) {
      throw new RangeError(`no point ${index} on contour ${labelKey(label)}`);
    }
    return c;
  }

  /** Human-readable list of everything still blocking submission. */
  missing(): string[] {
    const out: string[] = [];
    if (!this.apex) out.push("apex pick");
    if (!this.base) out.push("base pick");
    for (const label of SEED_LABELS) {
      const c = this.contours.get(labelKey(label));
      if (!c) {
        out.push(`contour (${label.phase}, ${label.angleDeg})`);
      } else if (c.points.length < MIN_DRAFT_POINTS) {
        out.push(
          `contour (${label.phase}, ${label.angleDeg}) needs >= ${MIN_DRAFT_POINTS} points, has ${c.points.length}`,
        );
      }
    }
    return out;
  }

  canSubmit(): boolean {
    return this.missing().length === 0;
  }

  /** Convert picks and strokes to world mm and build the POST body.
   * Each contour is resampled uniformly in arc length on the way out. */
  toPayload(resampleTo = SUBMIT_CONTOUR_POINTS): AnnotationPayload {
    const blockers = this.missing();
    if (blockers.length > 0) {
      throw new DraftError("incomplete", `draft incomplete: ${blockers.join("; ")}`);
    }
    const k = Math.max(resampleTo, MIN_DRAFT_POINTS);
    const contours = SEED_LABELS.map((label) => {
      const c = this.contours.get(labelKey(label))!;
      const mm = c.points.map((p) => pxToMm(c.geometry, p));
      return {
        phase: label.phase,
        angle_deg: label.angleDeg,
        points_mm: resamplePolyline(mm, k).map((p) => [p[0], p[1], p[2]] as [number, number, number]),
      };
    });
    const apex = pxToMm(this.apex!.geometry, this.apex!.px);
    const base = pxToMm(this.base!.geometry, this.base!.px);
    return {
      apex_mm: [apex[0], apex[1], apex[2]],
      base_mm: [base[0], base[1], base[2]],
      contours,
    };
  }

  toJSON(): DraftJson {
    return {
      version: 1,
      studyId: this.studyId,
      apex: this.apex,
      base: this.base,
      contours: [...this.contours.values()],
    };
  }

  static fromJSON(obj: unknown): AnnotationDraft {
    const j = obj as DraftJson;
    if (!j || j.version !== 1 || typeof j.studyId !== "string") {
      throw new DraftError("bad_stored_draft", "unrecognized draft payload");
    }
    const d = new AnnotationDraft(j.studyId);
    d.apex = j.apex ?? null;
    d.base = j.base ?? null;
    for (const c of j.contours ?? []) {
      d.contours.set(labelKey(c.label), {
        label: c.label,
        frame: c.frame,
        geometry: c.geometry,
        points: [...c.points],
      });
    }
    return d;
  }

  static storageKey(studyId: string): string {
    return `echo4d.draft.${studyId}`;
  }

  save(store: StorageLike): void {
    store.setItem(AnnotationDraft.storageKey(this.studyId), JSON.stringify(this.toJSON()));
  }

  static load(store: StorageLike, studyId: string): AnnotationDraft | null {
    const raw = store.getItem(AnnotationDraft.storageKey(studyId));
    if (raw === null) return null;
    try {
      return AnnotationDraft.fromJSON(JSON.parse(raw));
    } catch {
      return null;
    }
  }

  static discard(store: StorageLike, studyId: string): void {
    store.removeItem(AnnotationDraft.storageKey(studyId));
  }
}
