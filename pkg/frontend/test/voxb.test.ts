// Golden-file compatibility: the browser decoder must read exactly what
// the service encoder writes.

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { decodeVoxb, labelCounts, sameVolume, voxelAt } from "../src/voxb";

const GOLDEN = join(__dirname, "..", "..", "tests", "golden");

function golden(name: string): Uint8Array {
  return new Uint8Array(readFileSync(join(GOLDEN, name)));
}

describe("decodeVoxb", () => {
  it("decodes the tiny golden file byte-for-byte", () => {
    const vol = decodeVoxb(golden("tiny_2.voxb"));
    expect(vol.resolution).toBe(2);
    expect(vol.labels).toEqual(["a", "b"]);
    // hand-written expectation, same as the encoder-side test
    expect([...vol.data]).toEqual([0, 1, 2, 0, 1, 1, 0, 2]);
  });

  it("decodes the chair golden file with x-major indexing", () => {
    const vol = decodeVoxb(golden("chair_4.voxb"));
    expect(vol.resolution).toBe(4);
    expect(vol.labels).toEqual(["back", "seat", "leg", "armrest"]);
    const corners: Array<[number, number]> = [[0, 0], [0, 3], [3, 0], [3, 3]];
    for (let x = 0; x < 4; x++) {
      for (let y = 0; y < 4; y++) {
        for (let z = 0; z < 4; z++) {
          let want = 0;
          if (y === 1) want = 2;
          else if ((y === 2 || y === 3) && z === 0) want = 1;
          else if (y === 0 && corners.some(([cx, cz]) => cx === x && cz === z)) want = 3;
          expect(voxelAt(vol, x, y, z)).toBe(want);
        }
      }
    }
  });

  it("counts occupied voxels per label", () => {
    const vol = decodeVoxb(golden("chair_4.voxb"));
    const counts = labelCounts(vol);
    expect(counts[1]).toBe(8);  // back: y in {2,3}, z=0
    expect(counts[2]).toBe(16); // seat: full y=1 plane
    expect(counts[3]).toBe(4);  // legs: corners
    expect(counts[4]).toBe(0);  // armrest empty
  });

  it("round-trips through sameVolume", () => {
    const a = decodeVoxb(golden("chair_4.voxb"));
    const b = decodeVoxb(golden("chair_4.voxb"));
    expect(sameVolume(a, b)).toBe(true);
    b.data[1] = 3; // (0,0,1) is empty in the golden chair
    expect(sameVolume(a, b)).toBe(false);
  });

  it("rejects bad magic and truncation", () => {
    const good = golden("tiny_2.voxb");
    const bad = new Uint8Array(good);
    bad[0] = 0x58;
    expect(() => decodeVoxb(bad)).toThrow(/magic/);
    expect(() => decodeVoxb(good.subarray(0, good.length - 2))).toThrow(/truncated/);
  });
});
