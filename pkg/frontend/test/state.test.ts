// Mocked-transport contract tests: every voxel rendered came from the
// service, identity edits change nothing, slider bounds mirror the
// service-declared ranges.

import { describe, expect, it } from "vitest";

import { ApiClient, type Fetcher, type ShapePayload } from "../src/api";
import { SessionStore, sliderSpecs } from "../src/state";
import { decodeBase64Voxb, sameVolume } from "../src/voxb";

// minimal test-local VOXB encoder (mirrors the documented layout)
function encodeVoxb(resolution: number, labels: string[], data: Uint8Array): Uint8Array {
  const names = labels.map((l) => new TextEncoder().encode(l));
  const nameBytes = names.reduce((n, b) => n + b.length + 1, 0);
  const out = new Uint8Array(10 + nameBytes + data.length);
  out.set([0x56, 0x4f, 0x58, 0x42], 0);
  const view = new DataView(out.buffer);
  view.setUint16(4, 1, true);
  view.setUint16(6, resolution, true);
  view.setUint16(8, labels.length, true);
  let pos = 10;
  for (const b of names) {
    out.set(b, pos);
    pos += b.length + 1; // trailing NUL already zero
  }
  out.set(data, pos);
  return out;
}

function toB64(bytes: Uint8Array): string {
  return Buffer.from(bytes).toString("base64");
}

const LABELS = ["back", "seat", "leg", "armrest"];
const CATEGORY = {
  labels: LABELS,
  resolution: 4,
  latent_dim: 2,
  scale_range: [0.5, 1.5] as [number, number],
  translate_range: [-10, 10] as [number, number],
};

function shapeFor(fill: number, anchor = 1): ShapePayload {
  const data = new Uint8Array(64);
  data[fill % 64] = 2;
  data[(fill + 1) % 64] = 1;
  return {
    voxb_b64: toB64(encodeVoxb(4, LABELS, data)),
    transforms: LABELS.map(() => ({
      scale: [1, 1, 1] as [number, number, number],
      translate: [0, 0, 0] as [number, number, number],
    })),
    code: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
    anchor,
    anchor_label: LABELS[anchor],
  };
}

function isIdentity(t: { scale: number[]; translate: number[] }): boolean {
  return t.scale.every((s) => s === 1) && t.translate.every((v) => v === 0);
}

/** Fake service matching editsvc semantics for the paths the UI uses. */
function mockService(): { fetcher: Fetcher; requests: string[] } {
  const requests: string[] = [];
  const sessions = new Map<string, ShapePayload>();
  let nextId = 0;

  const fetcher: Fetcher = async (path, init) => {
    requests.push(path);
    const body = init?.body ? JSON.parse(init.body as string) : {};
    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), { status });

    if (path === "/api/category") return json(200, CATEGORY);
    if (path === "/api/generate") {
      const sid = `s${nextId++}`;
      const shape = shapeFor(body.seed ?? 7);
      sessions.set(sid, shape);
      return json(200, { session_id: sid, shape });
    }
    if (path === "/api/edit") {
      const shape = sessions.get(body.session_id);
      if (!shape) return json(404, { detail: "unknown session" });
      if (body.transform.scale.some((s: number) => s < 0.5 || s > 1.5)) {
        return json(400, { detail: "scale out of range" });
      }
      // identity edits re-assemble to the identical volume (service is
      // deterministic); non-identity edits move voxels
      const next = isIdentity(body.transform)
        ? shape
        : shapeFor(17, LABELS.indexOf(body.anchor));
      sessions.set(body.session_id, next);
      return json(200, { session_id: body.session_id, shape: next, history_length: 1 });
    }
    if (path === "/api/resample-part") {
      const shape = sessions.get(body.session_id);
      if (!shape) return json(404, { detail: "unknown session" });
      const next = { ...shape, code: [...shape.code] };
      const k = LABELS.indexOf(body.part);
      next.code[2 * k] = 9;
      next.code[2 * k + 1] = 9;
      sessions.set(body.session_id, next);
      return json(200, { session_id: body.session_id, shape: next });
    }
    return json(500, { detail: `unhandled ${path}` });
  };
  return { fetcher, requests };
}

describe("slider bounds", () => {
  it("mirror the service-declared ranges exactly", async () => {
    const { fetcher } = mockService();
    const api = new ApiClient(fetcher);
    const category = await api.category();
    const specs = sliderSpecs(category.scale_range, category.translate_range);
    expect(specs).toHaveLength(6);
    for (const spec of specs.slice(0, 3)) {
      expect([spec.min, spec.max]).toEqual(category.scale_range);
    }
    for (const spec of specs.slice(3)) {
      expect([spec.min, spec.max]).toEqual(category.translate_range);
    }
  });
});

describe("session store voxel provenance", () => {
  it("holds exactly the bytes the service sent, nothing else", async () => {
    const { fetcher } = mockService();
    const api = new ApiClient(fetcher);
    const store = new SessionStore();
    const res = await api.generate(3);
    store.applyServerShape(res.session_id, res.shape, 3);
    const state = store.get()!;
    expect(sameVolume(state.volume, decodeBase64Voxb(res.shape.voxb_b64))).toBe(true);
    expect(state.rawVoxbB64).toBe(res.shape.voxb_b64);
    // the store exposes no other way to write voxels
    const writers = Object.getOwnPropertyNames(SessionStore.prototype)
      .filter((name) => name !== "constructor");
    expect(writers.sort()).toEqual(["applyServerShape", "get", "partCounts", "subscribe"]);
  });

  it("identity edit leaves the rendered volume unchanged", async () => {
    const { fetcher } = mockService();
    const api = new ApiClient(fetcher);
    const store = new SessionStore();
    const gen = await api.generate(3);
    store.applyServerShape(gen.session_id, gen.shape, 3);
    const before = store.get()!.volume;

    const edited = await api.edit(gen.session_id, "seat",
                                  { scale: [1, 1, 1], translate: [0, 0, 0] });
    store.applyServerShape(edited.session_id, edited.shape, 3,
                           { kind: "edit", anchor: "seat",
                             transform: { scale: [1, 1, 1], translate: [0, 0, 0] } });
    const after = store.get()!;
    expect(sameVolume(before, after.volume)).toBe(true);
    expect(after.history).toHaveLength(1);
  });

  it("non-identity edit updates the volume from the response only", async () => {
    const { fetcher } = mockService();
    const api = new ApiClient(fetcher);
    const store = new SessionStore();
    const gen = await api.generate(3);
    store.applyServerShape(gen.session_id, gen.shape, 3);
    const edited = await api.edit(gen.session_id, "seat",
                                  { scale: [1.2, 1, 1], translate: [0, 0, 0] });
    store.applyServerShape(edited.session_id, edited.shape, 3,
                           { kind: "edit", anchor: "seat",
                             transform: { scale: [1.2, 1, 1], translate: [0, 0, 0] } });
    const state = store.get()!;
    expect(sameVolume(state.volume, decodeBase64Voxb(edited.shape.voxb_b64))).toBe(true);
  });

  it("out-of-range transforms surface the service error", async () => {
    const { fetcher } = mockService();
    const api = new ApiClient(fetcher);
    const gen = await api.generate(1);
    await expect(api.edit(gen.session_id, "seat",
                          { scale: [2.0, 1, 1], translate: [0, 0, 0] }))
      .rejects.toThrow(/400/);
  });

  it("resample only touches the named latent section", async () => {
    const { fetcher } = mockService();
    const api = new ApiClient(fetcher);
    const store = new SessionStore();
    const gen = await api.generate(5);
    store.applyServerShape(gen.session_id, gen.shape, 5);
    const res = await api.resamplePart(gen.session_id, "leg", 0);
    const k = LABELS.indexOf("leg");
    res.shape.code.forEach((v, i) => {
      if (i === 2 * k || i === 2 * k + 1) expect(v).toBe(9);
      else expect(v).toBe(gen.shape.code[i]);
    });
  });
});
