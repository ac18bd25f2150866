/** Volume curve parsing and clinical readouts.
 *
 * The service publishes one volume per frame as CSV with the exact
 * header `frame,volume_mL`. Parsing is strict: the review pane promises
 * to show precisely the served values, so any malformed row is an error
 * rather than a guess.
 */

export interface VolumePoint {
  frame: number;
  volumeMl: number;
}

export interface ClinicalReadout {
  edvMl: number;
  esvMl: number;
  efPercent: number;
}

export const VOLUMES_CSV_HEADER = "frame,volume_mL";

export function parseVolumesCsv(text: string): VolumePoint[] {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0 || lines[0] !== VOLUMES_CSV_HEADER) {
    throw new Error(`volume CSV must start with '${VOLUMES_CSV_HEADER}', got '${lines[0] ?? ""}'`);
  }
  const points: VolumePoint[] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    if (cells.length !== 2) throw new Error(`bad volume row: '${line}'`);
    const frame = Number(cells[0]);
    const volumeMl = Number(cells[1]);
    if (!Number.isInteger(frame) || frame < 0 || !Number.isFinite(volumeMl)) {
      throw new Error(`bad volume row: '${line}'`);
    }
    points.push({ frame, volumeMl });
  }
  if (points.length === 0) throw new Error("volume CSV has no data rows");
  points.forEach((p, i) => {
    if (p.frame !== i) throw new Error(`volume rows out of order at frame ${p.frame}`);
  });
  return points;
}

export function clinicalReadout(
  points: readonly VolumePoint[],
  edIndex: number,
  esIndex: number,
): ClinicalReadout {
  const pick = (idx: number): number => {
    const p = points[idx];
    if (!p) throw new RangeError(`no volume row for frame ${idx}`);
    return p.volumeMl;
  };
  const edv = pick(edIndex);
  const esv = pick(esIndex);
  if (!(edv > 0)) throw new RangeError(`ED volume must be positive, got ${edv}`);
  return { edvMl: edv, esvMl: esv, efPercent: (100 * (edv - esv)) / edv };
}
