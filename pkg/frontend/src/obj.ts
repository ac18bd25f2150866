/** Minimal Wavefront OBJ reader for the review mesh viewer.
 *
 * The service emits plain `v`/`f` lines with 1-based triangle indices;
 * anything else in the stream (comments, blank lines) is skipped.
 */

export interface ObjMesh {
  vertices: Array<[number, number, number]>;
  faces: Array<[number, number, number]>;
}

export function parseObjMesh(text: string): ObjMesh {
  const vertices: Array<[number, number, number]> = [];
  const faces: Array<[number, number, number]> = [];
  const lines = text.split(/\r?\n/);
  for (let n = 0; n < lines.length; n++) {
    const line = lines[n]!.trim();
    if (line === "" || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts[0] === "v") {
      if (parts.length < 4) throw new Error(`line ${n + 1}: short vertex row`);
      const xyz = parts.slice(1, 4).map(Number);
      if (xyz.some((c) => !Number.isFinite(c))) {
        throw new Error(`line ${n + 1}: non-numeric vertex`);
      }
      vertices.push([xyz[0]!, xyz[1]!, xyz[2]!]);
    } else if (parts[0] === "f") {
      if (parts.length !== 4) {
        throw new Error(`line ${n + 1}: only triangular faces are supported`);
      }
      const idx = parts.slice(1).map((tok) => Number(tok.split("/")[0]));
      if (idx.some((i) => !Number.isInteger(i) || i === 0)) {
        throw new Error(`line ${n + 1}: bad face index`);
      }
      faces.push([idx[0]!, idx[1]!, idx[2]!]);
    }
    // other directives (vn, vt, o, g, s, usemtl) are irrelevant here
  }
  for (const f of faces) {
    for (const i of f) {
      const k = i > 0 ? i : vertices.length + 1 + i;
      if (k < 1 || k > vertices.length) {
        throw new Error(`face index ${i} outside 1..${vertices.length}`);
      }
    }
  }
  return { vertices, faces };
}

export interface MeshBounds {
  min: [number, number, number];
  max: [number, number, number];
  center: [number, number, number];
  radius: number;
}

export function meshBounds(mesh: ObjMesh): MeshBounds {
  if (mesh.vertices.length === 0) throw new Error("mesh has no vertices");
  const min: [number, number, number] = [Infinity, Infinity, Infinity];
  const max: [number, number, number] = [-Infinity, -Infinity, -Infinity];
  for (const v of mesh.vertices) {
    for (let d = 0; d < 3; d++) {
      if (v[d]! < min[d]!) min[d] = v[d]!;
      if (v[d]! > max[d]!) max[d] = v[d]!;
    }
  }
  const center: [number, number, number] = [
    (min[0] + max[0]) / 2,
    (min[1] + max[1]) / 2,
    (min[2] + max[2]) / 2,
  ];
  const radius =
    Math.hypot(max[0] - min[0], max[1] - min[1], max[2] - min[2]) / 2 || 1;
  return { min, max, center, radius };
}
