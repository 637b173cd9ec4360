/**
 * Overlapping patch layout, mirroring the analysis pipeline's grid:
 * stride = round((1 - overlap) * patchSize), with a final start clamped
 * to dim - patchSize so the last patch ends exactly at the boundary.
 */

export interface GridParams {
  patchSize: number;
  overlap: number;
}

export interface PatchIndex {
  ix: number;
  iy: number;
  iz: number;
}

export function axisStarts(dim: number, patchSize: number, overlap: number): number[] {
  if (patchSize > dim) {
    throw new Error(`patch size ${patchSize} exceeds dimension ${dim}`);
  }
  if (overlap < 0 || overlap >= 0.5) {
    throw new Error(`overlap must be in [0, 0.5), got ${overlap}`);
  }
  const stride = Math.max(1, Math.round((1 - overlap) * patchSize));
  const starts = [0];
  let pos = stride;
  while (pos + patchSize <= dim) {
    starts.push(pos);
    pos += stride;
  }
  const last = dim - patchSize;
  if (starts[starts.length - 1] !== last) starts.push(last);
  return starts;
}

export function gridStarts(
  dims: [number, number, number],
  params: GridParams
): [number[], number[], number[]] {
  return [
    axisStarts(dims[0], params.patchSize, params.overlap),
    axisStarts(dims[1], params.patchSize, params.overlap),
    axisStarts(dims[2], params.patchSize, params.overlap),
  ];
}

export function* gridIndices(starts: [number[], number[], number[]]): Generator<PatchIndex> {
  for (let ix = 0; ix < starts[0].length; ix++)
    for (let iy = 0; iy < starts[1].length; iy++)
      for (let iz = 0; iz < starts[2].length; iz++) yield { ix, iy, iz };
}

export function patchStart(
  starts: [number[], number[], number[]],
  idx: PatchIndex
): [number, number, number] {
  return [starts[0][idx.ix], starts[1][idx.iy], starts[2][idx.iz]];
}

/** Parse the CLI grid syntax "P=64,overlap=0.25". */
export function parseGridSpec(spec: string): GridParams {
  const params: GridParams = { patchSize: 64, overlap: 0.25 };
  for (const part of spec.split(",")) {
    const [key, value] = part.split("=", 2);
    if (key === "P") params.patchSize = Number(value);
    else if (key === "overlap") params.overlap = Number(value);
    else throw new Error(`unknown grid parameter ${JSON.stringify(key)}`);
  }
  if (!Number.isInteger(params.patchSize) || params.patchSize < 1) {
    throw new Error(`invalid patch size in grid spec ${JSON.stringify(spec)}`);
  }
  return params;
}
