/** Typed client for the editing service HTTP API. */

export interface ModelInfo {
  base_res: number;
  levels: number[];
  level_resolutions: number[];
  center_counts: number[];
  latent_dim: number;
  var0: number;
  checkpoint_hash: string;
}

export interface CentersWire {
  level0: number[][];
  level1: number[][];
  level2: number[][];
}

export interface GenerateRequest {
  latent_seed: number;
  centers: CentersWire;
  include_overlays?: boolean;
}

export interface GeneratePayload {
  image: string;
  heatmaps: string[];
  attn?: string[];
  checkpoint_hash: string;
}

export interface ResetPayload {
  seed: number;
  centers: CentersWire;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init)
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        detail = JSON.stringify(await resp.json());
      } catch {
        // keep statusText
      }
      throw new ServiceError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/model/info");
  }

  generate(req: GenerateRequest, signal?: AbortSignal): Promise<GeneratePayload> {
    return this.request<GeneratePayload>("/generate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
      signal,
    });
  }

  reset(): Promise<ResetPayload> {
    return this.request<ResetPayload>("/reset", { method: "POST" });
  }
}
