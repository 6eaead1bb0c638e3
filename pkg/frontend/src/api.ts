// Typed client over fetch; every view reads exclusively through this module.

import type {
  ConfusionResponse,
  MetricsResponse,
  ModificationDraft,
  OrientationFractionsResponse,
  SaliencyResponse,
  SessionResponse,
  SuggestionsResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public field: string | null = null,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.base + path, init);
    if (!response.ok) {
      let code = String(response.status);
      let message = response.statusText;
      let field: string | null = null;
      try {
        const body = await response.json();
        const detail = body.detail ?? body;
        code = detail.code ?? code;
        message = detail.message ?? JSON.stringify(detail);
        field = detail.field ?? null;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message, field);
    }
    return (await response.json()) as T;
  }

  getSession(): Promise<SessionResponse> {
    return this.request("/session");
  }

  getConfusion(version: string, seed: string = "avg"): Promise<ConfusionResponse> {
    return this.request(`/confusion?version=${encodeURIComponent(version)}&seed=${seed}`);
  }

  getMetrics(): Promise<MetricsResponse> {
    return this.request("/metrics");
  }

  getSuggestions(): Promise<SuggestionsResponse> {
    return this.request("/suggestions");
  }

  getSaliency(classA: string, classB: string, bin: number, kind: string): Promise<SaliencyResponse> {
    const params = `class_a=${encodeURIComponent(classA)}&class_b=${encodeURIComponent(classB)}&bin=${bin}&kind=${kind}`;
    return this.request(`/saliency?${params}`);
  }

  getOrientationFractions(source: string, predicted: string): Promise<OrientationFractionsResponse> {
    return this.request(`/orientation-fractions?pair=${encodeURIComponent(source + "," + predicted)}`);
  }

  imageUrl(artifact: string): string {
    return `${this.base}/image/${artifact}`;
  }

  postTarget(source: string, predicted: string): Promise<unknown> {
    return this.request("/target", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ source, predicted }),
    });
  }

  postModifications(drafts: ModificationDraft[]): Promise<unknown> {
    return this.request("/modifications", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(drafts),
    });
  }

  postStep(): Promise<{ job: string | null; step: string }> {
    return this.request("/step", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({}),
    });
  }
}
