/** Slice-plane geometry: converting between pixel and mm coordinates.
 *
 * Every slice response carries its plane frame in `X-Slice-*` headers:
 * a world-mm origin, two in-plane unit basis vectors, and the isotropic
 * pixel pitch. The center pixel of the image sits exactly on the origin,
 * so world point of pixel (col, row) is
 *
 *   origin + (col - cx) * spacing * basisU + (row - cy) * spacing * basisV
 *
 * with (cx, cy) = ((w-1)/2, (h-1)/2). All math stays client-side; the
 * server never sees pixel coordinates.
 */

export type Vec3 = readonly [number, number, number];

export interface PixelPoint {
  readonly col: number;
  readonly row: number;
}

export interface SliceGeometry {
  readonly originMm: Vec3;
  readonly basisU: Vec3;
  readonly basisV: Vec3;
  readonly spacingMm: number;
  readonly angleDeg: number;
  readonly widthPx: number;
  readonly heightPx: number;
}

/** Minimal header accessor shared by fetch Headers and test doubles. */
export interface HeaderLike {
  get(name: string): string | null;
}

function parseVec3(headers: HeaderLike, name: string): Vec3 {
  const raw = headers.get(name);
  if (raw === null) throw new Error(`missing slice header ${name}`);
  const v = JSON.parse(raw) as unknown;
  if (!Array.isArray(v) || v.length !== 3 || !v.every((x) => Number.isFinite(x))) {
    throw new Error(`slice header ${name} is not a finite 3-vector: ${raw}`);
  }
  return [v[0], v[1], v[2]] as const;
}

function parseNumber(headers: HeaderLike, name: string): number {
  const raw = headers.get(name);
  if (raw === null) throw new Error(`missing slice header ${name}`);
  const v = JSON.parse(raw) as unknown;
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new Error(`slice header ${name} is not a finite number: ${raw}`);
  }
  return v;
}

export function parseSliceHeaders(
  headers: HeaderLike,
  widthPx: number,
  heightPx: number,
): SliceGeometry {
  if (!(widthPx > 0) || !(heightPx > 0)) {
    throw new Error(`bad slice extent ${widthPx}x${heightPx}`);
  }
  const spacing = parseNumber(headers, "X-Slice-Spacing-Mm");
  if (!(spacing > 0)) throw new Error(`non-positive slice spacing ${spacing}`);
  return {
    originMm: parseVec3(headers, "X-Slice-Origin-Mm"),
    basisU: parseVec3(headers, "X-Slice-Basis-U"),
    basisV: parseVec3(headers, "X-Slice-Basis-V"),
    spacingMm: spacing,
    angleDeg: parseNumber(headers, "X-Slice-Angle-Deg"),
    widthPx,
    heightPx,
  };
}

export function centerPx(g: SliceGeometry): PixelPoint {
  return { col: (g.widthPx - 1) / 2, row: (g.heightPx - 1) / 2 };
}

export function pxToMm(g: SliceGeometry, px: PixelPoint): Vec3 {
  const c = centerPx(g);
  const u = (px.col - c.col) * g.spacingMm;
  const v = (px.row - c.row) * g.spacingMm;
  return [
    g.originMm[0] + u * g.basisU[0] + v * g.basisV[0],
    g.originMm[1] + u * g.basisU[1] + v * g.basisV[1],
    g.originMm[2] + u * g.basisU[2] + v * g.basisV[2],
  ] as const;
}

/** Orthogonal projection of a world point onto the slice's pixel grid. */
export function mmToPx(g: SliceGeometry, p: Vec3): PixelPoint {
  const rel = [p[0] - g.originMm[0], p[1] - g.originMm[1], p[2] - g.originMm[2]];
  const dot = (b: Vec3) => rel[0]! * b[0] + rel[1]! * b[1] + rel[2]! * b[2];
  const c = centerPx(g);
  return {
    col: dot(g.basisU) / g.spacingMm + c.col,
    row: dot(g.basisV) / g.spacingMm + c.row,
  };
}

export function insideImage(g: SliceGeometry, px: PixelPoint): boolean {
  return px.col >= 0 && px.col <= g.widthPx - 1 && px.row >= 0 && px.row <= g.heightPx - 1;
}
