/**
 * Minimal NIfTI-1 single-file I/O.
 *
 * Little-endian, honors dim[1..3], datatype (uint8 | int16 | float32),
 * pixdim[1..3], vox_offset and the "n+1\0" magic; orientation matrices
 * and intensity scaling are ignored.  Volumes use x-fastest linear
 * indexing (index = x + nx*(y + ny*z)), which is exactly the on-disk
 * payload order, so round trips are bit-exact.
 */

import * as fs from "fs";
import * as path from "path";

export type VoxelData = Float32Array | Uint8Array | Int16Array;

export interface Volume {
  dims: [number, number, number];
  spacing: [number, number, number];
  data: VoxelData;
}

const HDR_SIZE = 348;
const MAGIC = "n+1\0";

const DTYPE_CODES = new Map<string, number>([
  ["Uint8Array", 2],
  ["Int16Array", 4],
  ["Float32Array", 16],
]);

export function linearIndex(dims: [number, number, number], x: number, y: number, z: number): number {
  return x + dims[0] * (y + dims[1] * z);
}

export function voxelCount(dims: [number, number, number]): number {
  return dims[0] * dims[1] * dims[2];
}

export function writeNifti(volume: Volume, filePath: string): void {
  const { dims, spacing, data } = volume;
  if (data.length !== voxelCount(dims)) {
    throw new Error(`data length ${data.length} does not match dims ${dims}`);
  }
  const code = DTYPE_CODES.get(data.constructor.name);
  if (code === undefined) {
    throw new Error(`unsupported element type ${data.constructor.name}`);
  }
  const header = Buffer.alloc(HDR_SIZE + 4); // header + empty extension flag
  header.writeInt32LE(HDR_SIZE, 0);
  header.writeInt16LE(3, 40); // dim[0]
  header.writeInt16LE(dims[0], 42);
  header.writeInt16LE(dims[1], 44);
  header.writeInt16LE(dims[2], 46);
  for (let i = 4; i <= 7; i++) header.writeInt16LE(1, 40 + 2 * i);
  header.writeInt16LE(code, 70);
  header.writeInt16LE(data.BYTES_PER_ELEMENT * 8, 72);
  header.writeFloatLE(1.0, 76); // pixdim[0]
  header.writeFloatLE(spacing[0], 80);
  header.writeFloatLE(spacing[1], 84);
  header.writeFloatLE(spacing[2], 88);
  header.writeFloatLE(HDR_SIZE + 4, 108); // vox_offset
  header.writeFloatLE(1.0, 112); // scl_slope
  header.write(MAGIC, 344, 4, "latin1");

  const payload = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  atomicWrite(filePath, Buffer.concat([header, payload]));
}

/** Write via a temp file + rename so readers never observe partial files. */
export function atomicWrite(filePath: string, content: Buffer | string): void {
  const dir = path.dirname(filePath);
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.${path.basename(filePath)}.tmp-${process.pid}`);
  fs.writeFileSync(tmp, content);
  fs.renameSync(tmp, filePath);
}

export function readNifti(filePath: string): Volume {
  const blob = fs.readFileSync(filePath);
  if (blob.length < HDR_SIZE) {
    throw new Error(`${filePath}: shorter than a NIfTI-1 header`);
  }
  if (blob.readInt32LE(0) !== HDR_SIZE) {
    throw new Error(`${filePath}: bad sizeof_hdr (big-endian files unsupported here)`);
  }
  const magic = blob.toString("latin1", 344, 348);
  if (magic !== MAGIC) {
    throw new Error(`${filePath}: unsupported magic ${JSON.stringify(magic)}`);
  }
  const ndim = blob.readInt16LE(40);
  if (ndim < 1 || ndim > 7) throw new Error(`${filePath}: invalid dim[0]=${ndim}`);
  const dims: [number, number, number] = [
    Math.max(1, blob.readInt16LE(42)),
    Math.max(1, blob.readInt16LE(44)),
    Math.max(1, blob.readInt16LE(46)),
  ];
  const spacing: [number, number, number] = [
    blob.readFloatLE(80) || 1.0,
    blob.readFloatLE(84) || 1.0,
    blob.readFloatLE(88) || 1.0,
  ];
  const code = blob.readInt16LE(70);
  const offset = Math.trunc(blob.readFloatLE(108));
  const n = voxelCount(dims);
  const payload = blob.subarray(offset);

  let data: VoxelData;
  if (code === 2) data = new Uint8Array(n);
  else if (code === 4) data = new Int16Array(n);
  else if (code === 16) data = new Float32Array(n);
  else throw new Error(`${filePath}: unsupported datatype code ${code}`);
  if (payload.length !== n * data.BYTES_PER_ELEMENT) {
    throw new Error(
      `${filePath}: payload holds ${payload.length} bytes, header implies ${n * data.BYTES_PER_ELEMENT}`
    );
  }
  // copy to an aligned buffer before reinterpreting
  const aligned = Buffer.alloc(payload.length);
  payload.copy(aligned);
  if (code === 2) data = new Uint8Array(aligned.buffer, 0, n);
  else if (code === 4) data = new Int16Array(aligned.buffer, 0, n);
  else data = new Float32Array(aligned.buffer, 0, n);
  return { dims, spacing, data };
}
