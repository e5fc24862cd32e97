import type { Advice, ModelInfo, Prediction, RecommendRequest } from "./types.js";

/** Non-2xx response, with the service's detail message when it sent one. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${response.status}`;
}

/**
 * Thin typed client. Network failures reject with whatever fetch threw
 * (the controller treats those as "service unreachable"); HTTP errors
 * reject with ApiError so validation problems stay distinguishable.
 */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  predict(hashtags: string[]): Promise<Prediction> {
    return this.post<Prediction>("/predict", { hashtags });
  }

  recommend(request: RecommendRequest): Promise<Advice> {
    return this.post<Advice>("/recommend", request);
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/model/info");
  }
}
