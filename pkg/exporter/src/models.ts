/**
 * Reference 3D segmentation models for inference and saliency export.
 *
 * Patches travel as rank-3 tensors shaped [nz, ny, nx] so that the
 * tensor's C-order memory matches the volumes' x-fastest linear order;
 * voxel (x, y, z) lives at tensor position [z, y, x].
 *
 * All models output a single vessel channel: `probabilities` applies a
 * sigmoid head, `logitAt` exposes the pre-activation value the saliency
 * gradient targets.  Weights are generated from a seed; training is out
 * of scope.
 */

import * as fs from "fs";
import * as tf from "@tensorflow/tfjs";

export interface SegmentationModel {
  readonly name: string;
  probabilities(patch: tf.Tensor3D): tf.Tensor3D;
  /** Pre-activation vessel logit at voxel pos = (x, y, z). */
  logitAt(patch: tf.Tensor3D, pos: [number, number, number]): tf.Scalar;
}

function at(patch3d: tf.Tensor3D, pos: [number, number, number]): number[] {
  // (x, y, z) voxel -> [z, y, x] tensor coordinates
  return [pos[2], pos[1], pos[0]];
}

/** Single-logit linear model: F(x) = sum(w * x) for every queried voxel. */
export class LinearModel implements SegmentationModel {
  readonly name = "linear";
  constructor(readonly weights: tf.Tensor3D) {}

  static fromSeed(seed: number, dims: [number, number, number]): LinearModel {
    const w = tf.randomNormal([dims[2], dims[1], dims[0]], 0, 1, "float32", seed);
    return new LinearModel(w as tf.Tensor3D);
  }

  probabilities(patch: tf.Tensor3D): tf.Tensor3D {
    return tf.tidy(() => {
      const s = tf.sigmoid(tf.sum(tf.mul(patch, this.weights)));
      return tf.fill(patch.shape, s.dataSync()[0]) as tf.Tensor3D;
    });
  }

  logitAt(patch: tf.Tensor3D, _pos: [number, number, number]): tf.Scalar {
    return tf.sum(tf.mul(patch, this.weights));
  }
}

/** Identity-like toy: vessel wherever intensity exceeds a threshold. */
export class ThresholdModel implements SegmentationModel {
  readonly name = "threshold";
  constructor(readonly threshold = 0.5, readonly gain = 50.0) {}

  private logits(patch: tf.Tensor3D): tf.Tensor3D {
    return tf.mul(tf.sub(patch, this.threshold), this.gain);
  }

  probabilities(patch: tf.Tensor3D): tf.Tensor3D {
    return tf.tidy(() => tf.sigmoid(this.logits(patch)));
  }

  logitAt(patch: tf.Tensor3D, pos: [number, number, number]): tf.Scalar {
    return tf.tidy(() => this.logits(patch).slice(at(patch, pos), [1, 1, 1]).reshape([])) as tf.Scalar;
  }
}

/** Two-layer convolutional net with a tanh hidden activation. */
export class ConvNet implements SegmentationModel {
  readonly name = "convnet";
  readonly w1: tf.Tensor5D;
  readonly b1: tf.Tensor1D;
  readonly w2: tf.Tensor5D;
  readonly b2: tf.Tensor1D;

  constructor(seed = 1, channels = 4) {
    this.w1 = tf.randomNormal([3, 3, 3, 1, channels], 0, 0.4, "float32", seed) as tf.Tensor5D;
    this.b1 = tf.randomNormal([channels], 0, 0.1, "float32", seed + 1) as tf.Tensor1D;
    this.w2 = tf.randomNormal([3, 3, 3, channels, 1], 0, 0.4, "float32", seed + 2) as tf.Tensor5D;
    this.b2 = tf.randomNormal([1], 0, 0.1, "float32", seed + 3) as tf.Tensor1D;
  }

  logits(patch: tf.Tensor3D): tf.Tensor3D {
    return tf.tidy(() => {
      const x = patch.reshape([1, ...patch.shape, 1]) as tf.Tensor5D;
      const h = tf.tanh(tf.add(tf.conv3d(x, this.w1, 1, "same"), this.b1));
      const out = tf.add(tf.conv3d(h as tf.Tensor5D, this.w2, 1, "same"), this.b2);
      return out.reshape(patch.shape) as tf.Tensor3D;
    });
  }

  probabilities(patch: tf.Tensor3D): tf.Tensor3D {
    return tf.tidy(() => tf.sigmoid(this.logits(patch)));
  }

  logitAt(patch: tf.Tensor3D, pos: [number, number, number]): tf.Scalar {
    return tf.tidy(() => this.logits(patch).slice(at(patch, pos), [1, 1, 1]).reshape([])) as tf.Scalar;
  }
}

/**
 * Nearest-neighbor 2x upsampling of a [b, d, h, w, c] tensor, built from
 * tile + reshape (conv3dTranspose has no gradient kernel in tfjs).
 */
function upsample2x(x: tf.Tensor5D): tf.Tensor5D {
  return tf.tidy(() => {
    const [b, d, h, w, c] = x.shape;
    let t = x.reshape([b, d, 1, h * w * c]).tile([1, 1, 2, 1]).reshape([b, 2 * d, h, w, c]);
    t = t.reshape([b * 2 * d, h, 1, w * c]).tile([1, 1, 2, 1]).reshape([b, 2 * d, 2 * h, w, c]);
    t = t.reshape([b * 4 * d * h, w, 1, c]).tile([1, 1, 2, 1]).reshape([b, 2 * d, 2 * h, 2 * w, c]);
    return t as tf.Tensor5D;
  });
}

/**
 * Small reference U-Net: one downsampling stage with a skip connection.
 * Smooth ops throughout (tanh, average pooling) so finite-difference
 * gradient checks are meaningful.
 */
export class UNet implements SegmentationModel {
  readonly name = "unet";
  private readonly params: Record<string, tf.Tensor>;
  readonly baseChannels: number;

  constructor(seed = 1, baseChannels = 8) {
    this.baseChannels = baseChannels;
    const c = baseChannels;
    let s = seed;
    const rnd = (shape: number[], scale: number) =>
      tf.randomNormal(shape, 0, scale, "float32", s++);
    this.params = {
      enc1_w: rnd([3, 3, 3, 1, c], 0.3),
      enc1_b: rnd([c], 0.05),
      enc2_w: rnd([3, 3, 3, c, 2 * c], 0.2),
      enc2_b: rnd([2 * c], 0.05),
      up_w: rnd([2, 2, 2, 2 * c, c], 0.2), // learned post-upsample mixing
      dec_w: rnd([3, 3, 3, 2 * c, c], 0.2),
      dec_b: rnd([c], 0.05),
      head_w: rnd([1, 1, 1, c, 1], 0.3),
      head_b: rnd([1], 0.05),
    };
  }

  logits(patch: tf.Tensor3D): tf.Tensor3D {
    const [d, h, w] = patch.shape;
    if (d % 2 || h % 2 || w % 2) {
      throw new Error(`U-Net needs even patch dims, got ${patch.shape}`);
    }
    const p = this.params;
    return tf.tidy(() => {
      const x = patch.reshape([1, d, h, w, 1]) as tf.Tensor5D;
      const enc1 = tf.tanh(tf.add(tf.conv3d(x, p.enc1_w as tf.Tensor5D, 1, "same"), p.enc1_b));
      const down = tf.avgPool3d(enc1 as tf.Tensor5D, 2, 2, "same");
      const enc2 = tf.tanh(
        tf.add(tf.conv3d(down, p.enc2_w as tf.Tensor5D, 1, "same"), p.enc2_b)
      );
      const up = tf.conv3d(upsample2x(enc2 as tf.Tensor5D), p.up_w as tf.Tensor5D, 1, "same");
      const cat = tf.concat([up, enc1], 4);
      const dec = tf.tanh(
        tf.add(tf.conv3d(cat as tf.Tensor5D, p.dec_w as tf.Tensor5D, 1, "same"), p.dec_b)
      );
      const out = tf.add(tf.conv3d(dec as tf.Tensor5D, p.head_w as tf.Tensor5D, 1, "same"), p.head_b);
      return out.reshape([d, h, w]) as tf.Tensor3D;
    });
  }

  probabilities(patch: tf.Tensor3D): tf.Tensor3D {
    return tf.tidy(() => tf.sigmoid(this.logits(patch)));
  }

  logitAt(patch: tf.Tensor3D, pos: [number, number, number]): tf.Scalar {
    return tf.tidy(() => this.logits(patch).slice(at(patch, pos), [1, 1, 1]).reshape([])) as tf.Scalar;
  }
}

export interface ModelSpec {
  kind: "linear" | "threshold" | "convnet" | "unet";
  seed?: number;
  threshold?: number;
  channels?: number;
  base_channels?: number;
}

/** Instantiate a model from a JSON descriptor file (the "weights path"). */
export function loadModel(specPath: string, patchDims: [number, number, number]): SegmentationModel {
  const spec: ModelSpec = JSON.parse(fs.readFileSync(specPath, "utf-8"));
  switch (spec.kind) {
    case "linear":
      return LinearModel.fromSeed(spec.seed ?? 1, patchDims);
    case "threshold":
      return new ThresholdModel(spec.threshold ?? 0.5);
    case "convnet":
      return new ConvNet(spec.seed ?? 1, spec.channels ?? 4);
    case "unet":
      return new UNet(spec.seed ?? 1, spec.base_channels ?? 8);
    default:
      throw new Error(`unknown model kind ${JSON.stringify((spec as any).kind)}`);
  }
}
