/** Page wiring: study browsing, annotation, job launch, and review.
 *
 * The page is a pure client of the segmentation service. Point the app
 * at a non-default service with `?api=http://host:port`.
 */

import { AnnotatorClient, ApiError, StudyMeta } from "./api.js";
import { AnnotationDraft, SeedLabel, SEED_LABELS, labelKey } from "./draft.js";
import { pxToMm } from "./geometry.js";
import { parseObjMesh } from "./obj.js";
import { JobFailedError, pollJob } from "./polling.js";
import { AxisPicker } from "./ui/axisPicker.js";
import { ContourTool } from "./ui/contourTool.js";
import { MeshViewer, clinicalSummaryText, volumeChartSvg, volumeCurveModel } from "./ui/review.js";
import { OverlayContour, SliceView } from "./ui/sliceView.js";

const PHASE_COLORS: Record<string, string> = { ED: "#3fb950", ES: "#f85149" };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const api = new AnnotatorClient(new URLSearchParams(location.search).get("api") ?? "");

const banner = el<HTMLDivElement>("banner");
const studySelect = el<HTMLSelectElement>("study-select");
const studyInfo = el<HTMLSpanElement>("study-info");
const frameSlider = el<HTMLInputElement>("frame-slider");
const frameLabel = el<HTMLSpanElement>("frame-label");
const angleSlider = el<HTMLInputElement>("angle-slider");
const angleLabel = el<HTMLSpanElement>("angle-label");
const missingList = el<HTMLUListElement>("missing-list");
const submitBtn = el<HTMLButtonElement>("submit-annotation");
const discardBtn = el<HTMLButtonElement>("discard-draft");
const thetaInput = el<HTMLInputElement>("theta-input");
const startJobBtn = el<HTMLButtonElement>("start-job");
const jobStatus = el<HTMLSpanElement>("job-status");
const reviewPanel = el<HTMLDivElement>("review-panel");
const volumeChart = el<HTMLDivElement>("volume-chart");
const clinicalDiv = el<HTMLDivElement>("clinical");
const meshFrame = el<HTMLInputElement>("mesh-frame");
const meshFrameLabel = el<HTMLSpanElement>("mesh-frame-label");

const view = new SliceView(el<HTMLCanvasElement>("slice-canvas"));
const meshViewer = new MeshViewer(el<HTMLCanvasElement>("mesh-canvas"));

let meta: StudyMeta | null = null;
let draft: AnnotationDraft | null = null;
let axisPicker: AxisPicker | null = null;
let contourTool: ContourTool | null = null;
let mode: "browse" | "axis" | "contour" | "edit" = "browse";
let activeLabel: SeedLabel | null = null;
let currentFrame = 0;
let currentAngle = 0;

function showBanner(kind: "error" | "ok", message: string): void {
  banner.className = kind;
  banner.textContent = message;
}

function clearBanner(): void {
  banner.className = "";
  banner.textContent = "";
}

function describe(err: unknown): string {
  if (err instanceof ApiError && err.rule) return `${err.rule}: ${err.detail ?? ""}`;
  if (err instanceof JobFailedError) return err.message;
  return err instanceof Error ? err.message : String(err);
}

async function guard<T>(work: () => Promise<T>): Promise<T | undefined> {
  try {
    clearBanner();
    return await work();
  } catch (err) {
    showBanner("error", describe(err));
    return undefined;
  }
}

async function refreshStudies(): Promise<void> {
  const studies = await api.listStudies();
  studySelect.replaceChildren(
    ...studies.map((s) => {
      const opt = document.createElement("option");
      opt.value = s.id;
      opt.textContent = s.has_annotation ? `${s.id} (annotated)` : s.id;
      return opt;
    }),
  );
  if (studies.length > 0) await selectStudy(studies[0]!.id);
}

async function selectStudy(id: string): Promise<void> {
  meta = await api.studyMeta(id);
  draft = AnnotationDraft.load(localStorage, id) ?? new AnnotationDraft(id);
  axisPicker = new AxisPicker(view, draft, onDraftChange, (m) => showBanner("error", m));
  contourTool = new ContourTool(view, draft, onDraftChange, (m) => showBanner("error", m));
  studySelect.value = id;
  studyInfo.textContent =
    `${meta.frame_count} frames, ED ${meta.ed_index}, ES ${meta.es_index}` +
    (meta.has_annotation ? ", annotated" : "");
  frameSlider.max = String(meta.frame_count - 1);
  currentFrame = meta.ed_index;
  currentAngle = 0;
  startJobBtn.disabled = !meta.has_annotation;
  reviewPanel.hidden = true;
  setMode("browse");
  await showCurrentSlice();
  onDraftChange();
}

async function showCurrentSlice(): Promise<void> {
  if (!meta) return;
  frameSlider.value = String(currentFrame);
  frameLabel.textContent = String(currentFrame);
  angleSlider.value = String(currentAngle);
  angleLabel.textContent = `${currentAngle}°`;
  const slice = await api.fetchSlice(meta.id, currentFrame, currentAngle);
  await view.showSlice(slice);
  refreshOverlay();
}

function refreshOverlay(): void {
  if (!draft) return;
  const contours: OverlayContour[] = [];
  for (const label of SEED_LABELS) {
    const c = draft.contour(label);
    if (!c) continue;
    if (Math.abs(((c.geometry.angleDeg - currentAngle) % 180 + 180) % 180) > 1e-9) continue;
    contours.push({
      pointsMm: c.points.map((p) => pxToMm(c.geometry, p)),
      color: PHASE_COLORS[label.phase] ?? "#8b949e",
      showHandles: mode === "edit" && activeLabel !== null && labelKey(activeLabel) === labelKey(label),
    });
  }
  const stroke = contourTool?.liveStroke;
  view.setOverlay({
    apexMm: draft.apex ? pxToMm(draft.apex.geometry, draft.apex.px) : undefined,
    baseMm: draft.base ? pxToMm(draft.base.geometry, draft.base.px) : undefined,
    contours,
    strokePx: stroke ?? undefined,
  });
}

function onDraftChange(): void {
  if (!draft) return;
  draft.save(localStorage);
  const blockers = draft.missing();
  missingList.replaceChildren(
    ...blockers.map((text) => {
      const li = document.createElement("li");
      li.textContent = text;
      return li;
    }),
  );
  submitBtn.disabled = !draft.canSubmit();
  refreshOverlay();
}

function setMode(next: typeof mode, label?: SeedLabel): void {
  mode = next;
  activeLabel = label ?? (next === "edit" ? activeLabel : null);
  axisPicker?.deactivate();
  contourTool?.deactivate();
  if (next === "axis" && axisPicker) {
    axisPicker.setFrame(currentFrame);
    axisPicker.activate();
  } else if ((next === "contour" || next === "edit") && contourTool && activeLabel) {
    contourTool.setTarget(activeLabel, currentFrame);
    contourTool.setMode(next === "contour" ? "draw" : "edit");
    contourTool.activate();
  }
  for (const btn of document.querySelectorAll<HTMLButtonElement>("#mode-bar button")) {
    const isContour = btn.dataset.mode === "contour";
    const matchesLabel =
      isContour &&
      activeLabel !== null &&
      btn.dataset.phase === activeLabel.phase &&
      Number(btn.dataset.angle) === activeLabel.angleDeg;
    btn.classList.toggle(
      "active",
      btn.dataset.mode === next && (!isContour || matchesLabel),
    );
  }
  refreshOverlay();
}

el<HTMLDivElement>("mode-bar").addEventListener("click", (ev) => {
  const btn = (ev.target as HTMLElement).closest("button");
  if (!btn || !meta) return;
  const kind = btn.dataset.mode as typeof mode | undefined;
  if (!kind) return;
  void guard(async () => {
    if (kind === "contour") {
      const label: SeedLabel = {
        phase: btn.dataset.phase as "ED" | "ES",
        angleDeg: Number(btn.dataset.angle) as 0 | 90,
      };
      currentFrame = label.phase === "ED" ? meta!.ed_index : meta!.es_index;
      currentAngle = label.angleDeg;
      await showCurrentSlice();
      setMode("contour", label);
    } else {
      setMode(kind);
    }
  });
});

studySelect.addEventListener("change", () => void guard(() => selectStudy(studySelect.value)));

frameSlider.addEventListener("input", () => {
  currentFrame = Number(frameSlider.value);
  void guard(async () => {
    await showCurrentSlice();
    if (mode === "axis") axisPicker?.setFrame(currentFrame);
    if ((mode === "contour" || mode === "edit") && activeLabel) {
      contourTool?.setTarget(activeLabel, currentFrame);
    }
  });
});

angleSlider.addEventListener("input", () => {
  currentAngle = Number(angleSlider.value);
  void guard(() => showCurrentSlice());
});

el<HTMLButtonElement>("repick-apex").addEventListener("click", () => {
  axisPicker?.setRepickTarget("apex");
  setMode("axis");
});

el<HTMLButtonElement>("repick-base").addEventListener("click", () => {
  axisPicker?.setRepickTarget("base");
  setMode("axis");
});

el<HTMLButtonElement>("clear-contour").addEventListener("click", () => {
  if (draft && activeLabel) {
    draft.clearContour(activeLabel);
    onDraftChange();
  }
});

discardBtn.addEventListener("click", () => {
  if (!meta) return;
  AnnotationDraft.discard(localStorage, meta.id);
  draft = new AnnotationDraft(meta.id);
  axisPicker = new AxisPicker(view, draft, onDraftChange, (m) => showBanner("error", m));
  contourTool = new ContourTool(view, draft, onDraftChange, (m) => showBanner("error", m));
  setMode("browse");
  onDraftChange();
});

submitBtn.addEventListener("click", () => {
  void guard(async () => {
    if (!draft || !meta) return;
    const res = await api.postAnnotation(meta.id, draft.toPayload());
    showBanner("ok", `annotation accepted (${res.contours} contours)`);
    meta.has_annotation = true;
    startJobBtn.disabled = false;
  });
});

startJobBtn.addEventListener("click", () => {
  void guard(async () => {
    if (!meta) return;
    const thetaD = Number(thetaInput.value);
    const { job_id } = await api.startSegmentation(meta.id, thetaD);
    jobStatus.textContent = `${job_id}: queued`;
    const info = await pollJob(() => api.jobInfo(job_id), {
      onUpdate: (i) => {
        jobStatus.textContent = `${i.job_id}: ${i.status}`;
      },
    });
    jobStatus.textContent = `${info.job_id}: done`;
    await showReview(info.job_id, info.frames);
  });
});

async function showReview(jobId: string, frames: number): Promise<void> {
  if (!meta) return;
  const csv = await api.jobVolumesCsv(jobId);
  const model = volumeCurveModel(csv, meta.ed_index, meta.es_index);
  volumeChart.innerHTML = volumeChartSvg(model, meta.ed_index, meta.es_index);
  clinicalDiv.textContent = clinicalSummaryText(model.clinical);
  reviewPanel.hidden = false;

  const meshCache = new Map<number, ReturnType<typeof parseObjMesh>>();
  const showMesh = async (frame: number): Promise<void> => {
    let mesh = meshCache.get(frame);
    if (!mesh) {
      mesh = parseObjMesh(await api.jobMeshObj(jobId, frame));
      meshCache.set(frame, mesh);
    }
    meshFrameLabel.textContent = String(frame);
    meshViewer.setMesh(mesh);
  };
  meshFrame.max = String(frames - 1);
  meshFrame.value = String(meta.ed_index);
  meshFrame.oninput = () => void guard(() => showMesh(Number(meshFrame.value)));
  await showMesh(meta.ed_index);
}

void guard(() => refreshStudies());
