// Session state: the single holder of voxel data on the client.
// Every volume in here was decoded from a service response; nothing else
// may write voxels, which is what makes the render trustworthy.

import type { ShapePayload, TransformDto } from "./api";
import { decodeBase64Voxb, labelCounts, type LabeledVolume } from "./voxb";

export interface EditRecord {
  kind: "edit" | "resample";
  anchor?: string;
  transform?: TransformDto;
  part?: string;
  seed?: number;
}

export interface SessionState {
  sessionId: string;
  seed: number | null;
  volume: LabeledVolume;
  rawVoxbB64: string;
  transforms: TransformDto[];
  code: number[];
  anchor: number;
  anchorLabel: string;
  history: EditRecord[];
}

export class SessionStore {
  private state: SessionState | null = null;
  private listeners: Array<(s: SessionState) => void> = [];

  /** The only path voxel data may enter the UI. */
  applyServerShape(sessionId: string, shape: ShapePayload, seed: number | null,
                   record?: EditRecord): SessionState {
    const history = record && this.state && this.state.sessionId === sessionId
      ? [...this.state.history, record]
      : [];
    this.state = {
      sessionId,
      seed: this.state && this.state.sessionId === sessionId ? this.state.seed : seed,
      volume: decodeBase64Voxb(shape.voxb_b64),
      rawVoxbB64: shape.voxb_b64,
      transforms: shape.transforms,
      code: shape.code,
      anchor: shape.anchor,
      anchorLabel: shape.anchor_label,
      history,
    };
    for (const fn of this.listeners) fn(this.state);
    return this.state;
  }

  get(): SessionState | null {
    return this.state;
  }

  partCounts(): number[] {
    return this.state ? labelCounts(this.state.volume) : [];
  }

  subscribe(fn: (s: SessionState) => void): void {
    this.listeners.push(fn);
  }
}

export interface SliderSpec {
  key: string;
  min: number;
  max: number;
  value: number;
}

/** Slider bounds come verbatim from the service-declared ranges. */
export function sliderSpecs(scaleRange: [number, number],
                            translateRange: [number, number]): SliderSpec[] {
  const specs: SliderSpec[] = [];
  for (const axis of ["x", "y", "z"]) {
    specs.push({ key: `scale ${axis}`, min: scaleRange[0], max: scaleRange[1], value: 1 });
  }
  for (const axis of ["x", "y", "z"]) {
    specs.push({
      key: `translate ${axis}`, min: translateRange[0], max: translateRange[1], value: 0,
    });
  }
  return specs;
}
