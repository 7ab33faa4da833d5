// VOXB decoder, bit-compatible with the service encoder.
// Layout (little-endian): "VOXB" | u16 version=1 | u16 resolution | u16 K |
// K null-terminated UTF-8 names | R^3 bytes of u8 labels in x-major order
// (index = x*R*R + y*R + z).

export interface LabeledVolume {
  resolution: number;
  labels: string[];
  data: Uint8Array;
}

const MAGIC = [0x56, 0x4f, 0x58, 0x42]; // "VOXB"

export function decodeVoxb(bytes: Uint8Array): LabeledVolume {
  if (bytes.length < 10 || MAGIC.some((b, i) => bytes[i] !== b)) {
    throw new Error("not a VOXB payload (bad magic)");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const version = view.getUint16(4, true);
  if (version !== 1) {
    throw new Error(`unsupported VOXB version ${version}`);
  }
  const resolution = view.getUint16(6, true);
  const k = view.getUint16(8, true);
  const decoder = new TextDecoder();
  const labels: string[] = [];
  let pos = 10;
  for (let i = 0; i < k; i++) {
    const end = bytes.indexOf(0, pos);
    if (end < 0) throw new Error("truncated label table");
    labels.push(decoder.decode(bytes.subarray(pos, end)));
    pos = end + 1;
  }
  const n = resolution * resolution * resolution;
  const data = bytes.subarray(pos, pos + n);
  if (data.length !== n) {
    throw new Error(`truncated voxel payload: expected ${n} bytes, got ${data.length}`);
  }
  return { resolution, labels, data: new Uint8Array(data) };
}

export function decodeBase64Voxb(b64: string): LabeledVolume {
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  return decodeVoxb(bytes);
}

export function voxelAt(vol: LabeledVolume, x: number, y: number, z: number): number {
  const r = vol.resolution;
  return vol.data[x * r * r + y * r + z];
}

/** Occupied voxel count per label id (index 0 unused). */
export function labelCounts(vol: LabeledVolume): number[] {
  const counts = new Array(vol.labels.length + 1).fill(0);
  for (const v of vol.data) counts[v]++;
  counts[0] = 0;
  return counts;
}

export function sameVolume(a: LabeledVolume, b: LabeledVolume): boolean {
  if (a.resolution !== b.resolution || a.data.length !== b.data.length) return false;
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}
