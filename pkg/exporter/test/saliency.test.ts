import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";

import { ConvNet, LinearModel, SegmentationModel, ThresholdModel, UNet } from "../src/models";
import { saliencyPatch } from "../src/export";

function randomPatch(dims: [number, number, number], seed: number): tf.Tensor3D {
  return tf.randomNormal([dims[2], dims[1], dims[0]], 0, 1, "float32", seed) as tf.Tensor3D;
}

describe("saliency gradients", () => {
  it("linear model saliency equals the weight tensor exactly", () => {
    const dims: [number, number, number] = [6, 5, 4];
    const model = LinearModel.fromSeed(7, dims);
    const patch = randomPatch(dims, 11);
    const got = saliencyPatch(model, patch, [2, 3, 1]);
    const expected = model.weights.dataSync() as Float32Array;
    expect(Array.from(got)).toEqual(Array.from(expected));
  });

  it("constant model yields all-zero saliency", () => {
    const constant: SegmentationModel = {
      name: "constant",
      probabilities: (p) => tf.fill(p.shape, 0.5) as tf.Tensor3D,
      logitAt: (p) => tf.add(tf.sum(tf.mul(p, 0)), 1.25) as tf.Scalar,
    };
    const patch = randomPatch([5, 5, 5], 3);
    const got = saliencyPatch(constant, patch, [2, 2, 2]);
    expect(got.every((v) => v === 0)).toBe(true);
  });

  it("positive saliency marks voxels that raise the vessel logit", () => {
    const model = new ThresholdModel(0.5, 50);
    const patch = randomPatch([5, 5, 5], 9);
    const pos: [number, number, number] = [1, 2, 3];
    const got = saliencyPatch(model, patch, pos);
    // logit depends only on the queried voxel, with positive gain
    const idx = pos[0] + 5 * (pos[1] + 5 * pos[2]);
    expect(got[idx]).toBeCloseTo(50, 4);
    expect(got.filter((v) => v !== 0)).toHaveLength(1);
  });

  it("convnet gradients match central finite differences (<1e-3 rel)", () => {
    const dims: [number, number, number] = [12, 12, 12];
    const model = new ConvNet(5, 4);
    const patch = randomPatch(dims, 21);
    const pos: [number, number, number] = [6, 5, 7];
    const grad = saliencyPatch(model, patch, pos);

    const base = patch.dataSync() as Float32Array;
    const order = Array.from(grad.keys()).sort((a, b) => Math.abs(grad[b]) - Math.abs(grad[a]));
    const sampled = order.slice(0, 32);
    const eps = 0.02;
    let worst = 0;
    for (const i of sampled) {
      const plus = new Float32Array(base);
      const minus = new Float32Array(base);
      plus[i] += eps;
      minus[i] -= eps;
      const fPlus = model.logitAt(tf.tensor3d(plus, patch.shape), pos).dataSync()[0];
      const fMinus = model.logitAt(tf.tensor3d(minus, patch.shape), pos).dataSync()[0];
      const fd = (fPlus - fMinus) / (2 * eps);
      const rel = Math.abs(fd - grad[i]) / Math.max(Math.abs(grad[i]), 1e-8);
      worst = Math.max(worst, rel);
    }
    expect(worst).toBeLessThan(1e-3);
  });

  it("unet gradients match central finite differences (<1e-3 rel)", () => {
    const dims: [number, number, number] = [8, 8, 8];
    const model = new UNet(3, 4);
    const patch = randomPatch(dims, 33);
    const pos: [number, number, number] = [4, 3, 5];
    const grad = saliencyPatch(model, patch, pos);
    const base = patch.dataSync() as Float32Array;
    const order = Array.from(grad.keys()).sort((a, b) => Math.abs(grad[b]) - Math.abs(grad[a]));
    const eps = 0.02;
    let worst = 0;
    for (const i of order.slice(0, 16)) {
      const plus = new Float32Array(base);
      const minus = new Float32Array(base);
      plus[i] += eps;
      minus[i] -= eps;
      const fPlus = model.logitAt(tf.tensor3d(plus, patch.shape), pos).dataSync()[0];
      const fMinus = model.logitAt(tf.tensor3d(minus, patch.shape), pos).dataSync()[0];
      const fd = (fPlus - fMinus) / (2 * eps);
      worst = Math.max(worst, Math.abs(fd - grad[i]) / Math.max(Math.abs(grad[i]), 1e-8));
    }
    expect(worst).toBeLessThan(1e-3);
  });

  it("post-activation mode rescales by the sigmoid derivative", () => {
    const model = new ThresholdModel(0.0, 2.0);
    const patch = tf.zeros([3, 3, 3]) as tf.Tensor3D;
    const pos: [number, number, number] = [1, 1, 1];
    const pre = saliencyPatch(model, patch, pos, "pre-activation");
    const post = saliencyPatch(model, patch, pos, "post-activation");
    const idx = 1 + 3 * (1 + 3 * 1);
    expect(post[idx]).toBeCloseTo(pre[idx] * 0.25, 5); // sigmoid'(0) = 0.25
  });
});
