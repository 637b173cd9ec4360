export { Volume, readNifti, writeNifti, linearIndex, voxelCount, atomicWrite } from "./nifti";
export { GridParams, PatchIndex, axisStarts, gridStarts, gridIndices, patchStart, parseGridSpec } from "./grid";
export { SegmentationModel, LinearModel, ThresholdModel, ConvNet, UNet, loadModel, ModelSpec } from "./models";
export {
  Poi,
  SaliencyTarget,
  exportSaliency,
  patchTensor,
  patchesContaining,
  predictPatches,
  readPoiCsv,
  runExport,
  saliencyPatch,
  slicePatch,
} from "./export";
