/** Typed client for the segmentation service HTTP API.
 *
 * The UI never computes segmentations itself; everything flows through
 * these endpoints. Validation failures (HTTP 422) carry a machine rule
 * name plus a human detail string, and both are preserved on the thrown
 * ApiError so the page can surface the rule verbatim.
 */

import { parseSliceHeaders, SliceGeometry } from "./geometry.js";

export interface StudySummary {
  id: string;
  frame_count: number;
  ed_index: number;
  es_index: number;
  has_annotation: boolean;
}

export interface StudyMeta {
  id: string;
  dims: [number, number, number];
  spacing_mm: [number, number, number];
  frame_count: number;
  ed_index: number;
  es_index: number;
  has_annotation: boolean;
  phantom: Record<string, unknown> | null;
}

export type JobStatus = "pending" | "running" | "done" | "failed";

export interface JobInfo {
  job_id: string;
  study_id: string;
  theta_d: number;
  status: JobStatus;
  error: string | null;
  frames: number;
}

export interface SliceImage {
  bytes: Uint8Array;
  geometry: SliceGeometry;
  /** Raw PNG blob URL is built lazily by the viewer; tests use bytes. */
  contentType: string;
}

export interface AnnotationPayload {
  apex_mm: [number, number, number];
  base_mm: [number, number, number];
  contours: Array<{
    phase: "ED" | "ES";
    angle_deg: 0 | 90;
    points_mm: Array<[number, number, number]>;
  }>;
}

export class ApiError extends Error {
  readonly status: number;
  readonly rule: string | null;
  readonly detail: string | null;

  constructor(status: number, rule: string | null, detail: string | null) {
    super(rule ? `${rule}: ${detail ?? ""}` : (detail ?? `HTTP ${status}`));
    this.name = "ApiError";
    this.status = status;
    this.rule = rule;
    this.detail = detail;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function raiseForStatus(res: Response): Promise<void> {
  if (res.ok) return;
  let rule: string | null = null;
  let detail: string | null = null;
  try {
    const body = (await res.json()) as Record<string, unknown>;
    if (typeof body.rule === "string") rule = body.rule;
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; status alone will have to do
  }
  throw new ApiError(res.status, rule, detail);
}

export class AnnotatorClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => globalThis.fetch(url, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(this.base + path);
    await raiseForStatus(res);
    return (await res.json()) as T;
  }

  listStudies(): Promise<StudySummary[]> {
    return this.getJson("/api/studies");
  }

  studyMeta(studyId: string): Promise<StudyMeta> {
    return this.getJson(`/api/studies/${encodeURIComponent(studyId)}/meta`);
  }

  sliceUrl(studyId: string, frame: number, angleDeg: number): string {
    const q = new URLSearchParams({ frame: String(frame), angle: String(angleDeg) });
    return `${this.base}/api/studies/${encodeURIComponent(studyId)}/slice?${q}`;
  }

  async fetchSlice(studyId: string, frame: number, angleDeg: number): Promise<SliceImage> {
    const res = await this.fetchImpl(this.sliceUrl(studyId, frame, angleDeg));
    await raiseForStatus(res);
    const bytes = new Uint8Array(await res.arrayBuffer());
    const { width, height } = pngExtent(bytes);
    return {
      bytes,
      geometry: parseSliceHeaders(res.headers, width, height),
      contentType: res.headers.get("content-type") ?? "image/png",
    };
  }

  async postAnnotation(
    studyId: string,
    payload: AnnotationPayload,
  ): Promise<{ ok: boolean; contours: number }> {
    const res = await this.fetchImpl(
      `${this.base}/api/studies/${encodeURIComponent(studyId)}/annotation`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(payload),
      },
    );
    await raiseForStatus(res);
    return (await res.json()) as { ok: boolean; contours: number };
  }

  async startSegmentation(
    studyId: string,
    thetaD: number,
  ): Promise<{ job_id: string; status: JobStatus }> {
    const res = await this.fetchImpl(
      `${this.base}/api/studies/${encodeURIComponent(studyId)}/segment`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ theta_d: thetaD }),
      },
    );
    await raiseForStatus(res);
    return (await res.json()) as { job_id: string; status: JobStatus };
  }

  jobInfo(jobId: string): Promise<JobInfo> {
    return this.getJson(`/api/jobs/${encodeURIComponent(jobId)}`);
  }

  async jobVolumesCsv(jobId: string): Promise<string> {
    const res = await this.fetchImpl(`${this.base}/api/jobs/${encodeURIComponent(jobId)}/volumes`);
    await raiseForStatus(res);
    return res.text();
  }

  async jobMeshObj(jobId: string, frame: number): Promise<string> {
    const res = await this.fetchImpl(
      `${this.base}/api/jobs/${encodeURIComponent(jobId)}/meshes/${frame}`,
    );
    await raiseForStatus(res);
    return res.text();
  }
}

/** Read width/height from a PNG IHDR without decoding pixel data. */
export function pngExtent(bytes: Uint8Array): { width: number; height: number } {
  const sig = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];
  if (bytes.length < 24 || !sig.every((b, i) => bytes[i] === b)) {
    throw new Error("not a PNG stream");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  return { width: view.getUint32(16), height: view.getUint32(20) };
}
