/** Axis picking controller: two clicks define the long axis.
 *
 * The first click lands the apex, the second the base; selecting the
 * re-pick target lets either endpoint be replaced without disturbing
 * the other. Picks are kept in the draft in slice coordinates and
 * shown on every angle because the axis lies in all rotated planes.
 */

import { AnnotationDraft, DraftError } from "../draft.js";
import { PixelPoint } from "../geometry.js";
import { SliceView } from "./sliceView.js";

export class AxisPicker {
  private readonly view: SliceView;
  private readonly draft: AnnotationDraft;
  private readonly onChange: () => void;
  private readonly onError: (message: string) => void;
  private repickTarget: "apex" | "base" | undefined;
  private frame = 0;

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

  setFrame(frame: number): void {
    this.frame = frame;
  }

  /** Force the next click to replace one endpoint. */
  setRepickTarget(target: "apex" | "base" | undefined): void {
    this.repickTarget = target;
  }

  activate(): void {
    this.view.onPointerDown = (px) => this.place(px);
    this.view.onPointerMove = null;
    this.view.onPointerUp = null;
  }

  deactivate(): void {
    this.view.onPointerDown = null;
  }

  private place(px: PixelPoint): void {
    try {
      const slot = this.draft.placeAxisPick(px, this.frame, this.view.geometry, this.repickTarget);
      if (slot === this.repickTarget) this.repickTarget = undefined;
      this.onChange();
    } catch (err) {
      if (err instanceof DraftError) this.onError(err.message);
      else throw err;
    }
  }
}
