/** Thin typed client for the retrieval service.
 *
 * Query requests are serialized through a single in-flight slot: issuing a
 * new query aborts the previous one, so a slow old response can never
 * overwrite a newer grid.
 */

import type {
  MapResponse, MarksGroupPayload, MarksResponse, QueryRequest, QueryResponse,
  StatsResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  private inflightQuery: AbortController | null = null;

  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  imageUrl(thumbnailPath: string): string {
    return this.baseUrl + thumbnailPath;
  }

  private async parse<T>(res: Response): Promise<T> {
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      const reason = (body as { error?: string }).error ?? `HTTP ${res.status}`;
      throw new ApiError(res.status, reason);
    }
    return body as T;
  }

  async query(req: QueryRequest): Promise<QueryResponse> {
    this.inflightQuery?.abort();
    const controller = new AbortController();
    this.inflightQuery = controller;
    const res = await this.fetchFn(`${this.baseUrl}/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
      signal: controller.signal,
    });
    if (this.inflightQuery === controller) {
      this.inflightQuery = null;
    }
    return this.parse<QueryResponse>(res);
  }

  async map(): Promise<MapResponse> {
    return this.parse<MapResponse>(await this.fetchFn(`${this.baseUrl}/map`));
  }

  async stats(): Promise<StatsResponse> {
    return this.parse<StatsResponse>(await this.fetchFn(`${this.baseUrl}/stats`));
  }

  async submitMarks(groups: MarksGroupPayload[]): Promise<MarksResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/marks`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ groups }),
    });
    return this.parse<MarksResponse>(res);
  }
}
