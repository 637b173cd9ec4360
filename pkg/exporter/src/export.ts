/**
 * Patch inference and per-(POI, patch) saliency export.
 *
 * Outputs follow the analysis pipeline's naming contract:
 * `pred_<ix>_<iy>_<iz>.nii` per-patch binarized predictions plus an
 * averaged-overlap stitched volume, and `attr_<poi>_<ix>_<iy>_<iz>.nii`
 * signed float32 saliency maps.  All files are written atomically.
 */

import * as fs from "fs";
import * as path from "path";
import * as tf from "@tensorflow/tfjs";

import { GridParams, PatchIndex, gridIndices, gridStarts, patchStart } from "./grid";
import { Volume, atomicWrite, linearIndex, voxelCount, writeNifti } from "./nifti";
import { SegmentationModel } from "./models";

export type SaliencyTarget = "pre-activation" | "post-activation";

export interface Poi {
  poiId: number;
  position: [number, number, number];
}

export function slicePatch(volume: Volume, start: [number, number, number], p: number): Float32Array {
  const out = new Float32Array(p * p * p);
  const [nx, ny] = [volume.dims[0], volume.dims[1]];
  let o = 0;
  for (let z = 0; z < p; z++) {
    for (let y = 0; y < p; y++) {
      const base = start[0] + nx * (start[1] + y + ny * (start[2] + z));
      for (let x = 0; x < p; x++) {
        out[o++] = volume.data[base + x] as number;
      }
    }
  }
  return out;
}

export function patchTensor(volume: Volume, start: [number, number, number], p: number): tf.Tensor3D {
  // x-fastest buffer == C-order [z, y, x] tensor
  return tf.tensor3d(slicePatch(volume, start, p), [p, p, p]);
}

export function predictPatches(
  volume: Volume,
  grid: GridParams,
  model: SegmentationModel,
  outDir: string,
  threshold = 0.5
): string[] {
  const starts = gridStarts(volume.dims, grid);
  const p = grid.patchSize;
  const n = voxelCount(volume.dims);
  const probSum = new Float32Array(n);
  const probCount = new Float32Array(n);
  const written: string[] = [];

  for (const idx of gridIndices(starts)) {
    const start = patchStart(starts, idx);
    const patch = patchTensor(volume, start, p);
    const probs = model.probabilities(patch);
    const values = probs.dataSync() as Float32Array;
    patch.dispose();
    probs.dispose();

    const binary = new Uint8Array(p * p * p);
    for (let i = 0; i < values.length; i++) binary[i] = values[i] > threshold ? 1 : 0;
    const name = `pred_${idx.ix}_${idx.iy}_${idx.iz}.nii`;
    writeNifti(
      { dims: [p, p, p], spacing: volume.spacing, data: binary },
      path.join(outDir, name)
    );
    written.push(name);

    let o = 0;
    for (let z = 0; z < p; z++) {
      for (let y = 0; y < p; y++) {
        const base = start[0] + volume.dims[0] * (start[1] + y + volume.dims[1] * (start[2] + z));
        for (let x = 0; x < p; x++, o++) {
          probSum[base + x] += values[o];
          probCount[base + x] += 1;
        }
      }
    }
  }

  const stitched = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    stitched[i] = probSum[i] / probCount[i] > threshold ? 1 : 0;
  }
  writeNifti(
    { dims: volume.dims, spacing: volume.spacing, data: stitched },
    path.join(outDir, "pred_stitched.nii")
  );
  written.push("pred_stitched.nii");
  return written;
}

/**
 * Signed gradient of the selected output with respect to every input
 * voxel of the patch.  Positive values mean an infinitesimal increase of
 * that voxel raises the POI's vessel logit.
 */
export function saliencyPatch(
  model: SegmentationModel,
  patch: tf.Tensor3D,
  localPos: [number, number, number],
  target: SaliencyTarget = "pre-activation"
): Float32Array {
  const f = (x: tf.Tensor): tf.Tensor => {
    const logit = model.logitAt(x as tf.Tensor3D, localPos);
    return target === "post-activation" ? tf.sigmoid(logit) : logit;
  };
  const grad = tf.grad(f)(patch);
  const out = grad.dataSync() as Float32Array;
  grad.dispose();
  return out;
}

export function exportSaliency(
  volume: Volume,
  grid: GridParams,
  model: SegmentationModel,
  poi: Poi,
  idx: PatchIndex,
  outDir: string,
  target: SaliencyTarget = "pre-activation"
): string {
  const starts = gridStarts(volume.dims, grid);
  const start = patchStart(starts, idx);
  const p = grid.patchSize;
  const local: [number, number, number] = [
    poi.position[0] - start[0],
    poi.position[1] - start[1],
    poi.position[2] - start[2],
  ];
  if (local.some((c) => c < 0 || c >= p)) {
    throw new Error(`POI ${poi.poiId} at ${poi.position} lies outside patch (${idx.ix},${idx.iy},${idx.iz})`);
  }
  const patch = patchTensor(volume, start, p);
  const values = saliencyPatch(model, patch, local, target);
  patch.dispose();
  const name = `attr_${poi.poiId}_${idx.ix}_${idx.iy}_${idx.iz}.nii`;
  writeNifti({ dims: [p, p, p], spacing: volume.spacing, data: values }, path.join(outDir, name));
  return name;
}

export interface PatchMembership {
  poi: Poi;
  idx: PatchIndex;
}

/** All patches whose axis ranges contain the POI voxel. */
export function patchesContaining(
  starts: [number[], number[], number[]],
  patchSize: number,
  position: [number, number, number]
): PatchIndex[] {
  const perAxis: number[][] = [0, 1, 2].map((a) =>
    starts[a].map((s, i) => [s, i]).filter(([s]) => s <= position[a] && position[a] < s + patchSize).map(([, i]) => i)
  );
  const result: PatchIndex[] = [];
  for (const ix of perAxis[0])
    for (const iy of perAxis[1])
      for (const iz of perAxis[2]) result.push({ ix, iy, iz });
  return result;
}

export interface ExportManifest {
  grid: { patch_size: number; overlap: number; starts: number[][] };
  volume_dims: number[];
  model: string;
  target: SaliencyTarget;
  predictions: string[];
  exports: { poi_id: number; patch: number[]; file: string }[];
}

export function runExport(
  volume: Volume,
  grid: GridParams,
  model: SegmentationModel,
  pois: Poi[],
  outDir: string,
  target: SaliencyTarget = "pre-activation",
  withPredictions = true
): ExportManifest {
  fs.mkdirSync(outDir, { recursive: true });
  const starts = gridStarts(volume.dims, grid);
  const manifest: ExportManifest = {
    grid: { patch_size: grid.patchSize, overlap: grid.overlap, starts },
    volume_dims: [...volume.dims],
    model: model.name,
    target,
    predictions: [],
    exports: [],
  };
  if (withPredictions) {
    manifest.predictions = predictPatches(volume, grid, model, outDir);
  }
  for (const poi of pois) {
    for (const idx of patchesContaining(starts, grid.patchSize, poi.position)) {
      const file = exportSaliency(volume, grid, model, poi, idx, outDir, target);
      manifest.exports.push({ poi_id: poi.poiId, patch: [idx.ix, idx.iy, idx.iz], file });
    }
  }
  atomicWrite(path.join(outDir, "export_manifest.json"), JSON.stringify(manifest, null, 2) + "\n");
  return manifest;
}

/** Parse the analysis pipeline's POI table (CSV with a header row). */
export function readPoiCsv(filePath: string): Poi[] {
  const lines = fs.readFileSync(filePath, "utf-8").trim().split(/\r?\n/);
  if (!lines.length) return [];
  const header = lines[0].split(",");
  const col = (name: string) => {
    const i = header.indexOf(name);
    if (i < 0) throw new Error(`${filePath}: missing column ${JSON.stringify(name)}`);
    return i;
  };
  const [ci, cx, cy, cz] = [col("poi_id"), col("x"), col("y"), col("z")];
  return lines.slice(1).filter((l) => l.length).map((line) => {
    const parts = line.split(",");
    return {
      poiId: Number(parts[ci]),
      position: [Number(parts[cx]), Number(parts[cy]), Number(parts[cz])] as [number, number, number],
    };
  });
}
