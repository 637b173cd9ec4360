/**
 * Writes cross-component seam fixtures for the analysis pipeline's tests:
 * a deterministic float32 volume, a binary mask, and the patch starts for
 * dims 160^3 at P=64 / 25% overlap.  Values use exact float32 arithmetic
 * (integer multiples of 2^-6) so both sides can compare bit-exactly.
 */

import * as path from "path";

import { axisStarts } from "../src/grid";
import { atomicWrite, linearIndex, writeNifti } from "../src/nifti";

export function seamFloatValue(x: number, y: number, z: number): number {
  return Math.fround((x * 31 + y * 7 - z * 13) * 0.015625 - 2.5);
}

export function makeSeamFixtures(outDir: string): void {
  const dims: [number, number, number] = [11, 7, 5];
  const data = new Float32Array(11 * 7 * 5);
  const mask = new Uint8Array(11 * 7 * 5);
  for (let z = 0; z < dims[2]; z++) {
    for (let y = 0; y < dims[1]; y++) {
      for (let x = 0; x < dims[0]; x++) {
        const i = linearIndex(dims, x, y, z);
        data[i] = seamFloatValue(x, y, z);
        mask[i] = (x + y + z) % 3 === 0 ? 1 : 0;
      }
    }
  }
  writeNifti({ dims, spacing: [1, 1, 1], data }, path.join(outDir, "seam_float.nii"));
  writeNifti({ dims, spacing: [0.5, 0.75, 1.25], data: mask }, path.join(outDir, "seam_mask.nii"));
  atomicWrite(
    path.join(outDir, "seam_grid.json"),
    JSON.stringify(
      {
        dims: [160, 160, 160],
        patch_size: 64,
        overlap: 0.25,
        starts: [
          axisStarts(160, 64, 0.25),
          axisStarts(160, 64, 0.25),
          axisStarts(160, 64, 0.25),
        ],
      },
      null,
      2
    ) + "\n"
  );
}

if (require.main === module) {
  const target = process.argv[2];
  if (!target) {
    console.error("usage: make_seam_fixtures <output-dir>");
    process.exit(2);
  }
  makeSeamFixtures(target);
  console.log(`seam fixtures written to ${target}`);
}
