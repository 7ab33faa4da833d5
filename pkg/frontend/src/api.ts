// Typed client for the partforge edit service.

export interface CategoryInfo {
  labels: string[];
  resolution: number;
  latent_dim: number;
  scale_range: [number, number];
  translate_range: [number, number];
}

export interface TransformDto {
  scale: [number, number, number];
  translate: [number, number, number];
}

export interface ShapePayload {
  voxb_b64: string;
  transforms: TransformDto[];
  code: number[];
  anchor: number;
  anchor_label: string;
}

export interface SessionResponse {
  session_id: string;
  shape: ShapePayload;
  history_length?: number;
}

export type Fetcher = (path: string, init?: RequestInit) => Promise<Response>;

const defaultFetcher: Fetcher = (path, init) => fetch(path, init);

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(private readonly fetcher: Fetcher = defaultFetcher,
              private readonly base = "/api") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetcher(`${this.base}${path}`, init);
    if (!res.ok) {
      const body = await res.json().catch(() => ({} as Record<string, unknown>));
      const detail = (body as { detail?: string }).detail ?? res.statusText;
      throw new ApiError(res.status, detail);
    }
    return res.json() as Promise<T>;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  category(): Promise<CategoryInfo> {
    return this.request<CategoryInfo>("/category");
  }

  generate(seed?: number, anchor?: string): Promise<SessionResponse> {
    return this.post<SessionResponse>("/generate", { seed, anchor });
  }

  edit(sessionId: string, anchor: string, transform: TransformDto): Promise<SessionResponse> {
    return this.post<SessionResponse>("/edit", {
      session_id: sessionId,
      anchor,
      transform,
    });
  }

  resamplePart(sessionId: string, part: string, seed: number): Promise<SessionResponse> {
    return this.post<SessionResponse>("/resample-part", {
      session_id: sessionId,
      part,
      seed,
    });
  }

  crossover(sessionA: string, sessionB: string, parts: string[]): Promise<SessionResponse> {
    return this.post<SessionResponse>("/crossover", {
      session_a: sessionA,
      session_b: sessionB,
      parts,
    });
  }
}
