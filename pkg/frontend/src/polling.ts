/** Job polling with exponential backoff.
 *
 * The service runs segmentation jobs on a worker thread; the client
 * polls job state until it reaches a terminal status. Sleep is
 * injectable so unit tests can drive the schedule with fake time.
 */

import { JobInfo } from "./api.js";

export class JobFailedError extends Error {
  readonly info: JobInfo;

  constructor(info: JobInfo) {
    super(`job ${info.job_id} failed: ${info.error ?? "unknown error"}`);
    this.name = "JobFailedError";
    this.info = info;
  }
}

export class PollTimeoutError extends Error {
  constructor(jobId: string, timeoutMs: number) {
    super(`job ${jobId} still not finished after ${timeoutMs} ms`);
    this.name = "PollTimeoutError";
  }
}

export interface PollOptions {
  initialMs?: number;
  factor?: number;
  maxMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
  onUpdate?: (info: JobInfo) => void;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export async function pollJob(
  fetchInfo: () => Promise<JobInfo>,
  opts: PollOptions = {},
): Promise<JobInfo> {
  const initialMs = opts.initialMs ?? 500;
  const factor = opts.factor ?? 1.6;
  const maxMs = opts.maxMs ?? 5_000;
  const timeoutMs = opts.timeoutMs ?? 600_000;
  const sleep = opts.sleep ?? defaultSleep;

  let waited = 0;
  let delay = initialMs;
  for (;;) {
    const info = await fetchInfo();
    opts.onUpdate?.(info);
    if (info.status === "done") return info;
    if (info.status === "failed") throw new JobFailedError(info);
    if (waited >= timeoutMs) throw new PollTimeoutError(info.job_id, timeoutMs);
    const step = Math.min(delay, timeoutMs - waited);
    await sleep(step);
    waited += step;
    delay = Math.min(delay * factor, maxMs);
  }
}
