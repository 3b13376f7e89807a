/** Typed client for the TB GraphRAG JSON API. */

export interface QuerySettings {
  topK: number;
  useGraph: boolean;
  generator: string;
}

export interface ContextItem {
  chunk_id: string;
  doc_id: string;
  section_heading: string;
  text: string;
  fused_score: number;
  via_entities: string[];
}

export interface QueryResponse {
  answer: string;
  contexts: ContextItem[];
  entities_used: number;
  latency_seconds: number;
  config: {
    top_k: number;
    use_graph: boolean;
    generator: string;
    generation_id: string;
  };
}

export interface EntityCard {
  entity_id: string;
  canonical_name: string;
  category: string;
  aliases: string[];
  neighbors: { entity_id: string; canonical_name: string }[];
  mention_chunk_count: number;
  mention_total: number;
}

export interface ReportRow {
  dataset: string;
  model: string;
  n_items: number | null;
  rouge_l: number | null;
  token_f1: number | null;
  bert_f1: number | null;
  ppl_pred: number | null;
  recall_at_k: number | null;
  k: number | null;
  context_relevance: number | null;
  entities_used: number | null;
  latency_s_per_item: number | null;
  accuracy_pct: number | null;
  factuality_pct: number | null;
  rated: number | null;
  abstentions: number | null;
}

export interface Report {
  rows: ReportRow[];
  parameters: Record<string, unknown>[];
}

/**
 * A failed API call. For 502 generator failures the service still returns
 * the retrieval contexts, carried here so the UI can display citations.
 */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly contexts: ContextItem[] = [],
    readonly entitiesUsed: number | null = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async query(question: string, settings: QuerySettings): Promise<QueryResponse> {
    const response = await this.fetchFn(this.url("/api/query"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        question,
        top_k: settings.topK,
        use_graph: settings.useGraph,
        endpoint_name: settings.generator,
      }),
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(
        response.status,
        payload.error ?? `query failed with HTTP ${response.status}`,
        payload.contexts ?? [],
        payload.entities_used ?? null,
      );
    }
    return payload as QueryResponse;
  }

  async entityCard(entityId: string): Promise<EntityCard> {
    const response = await this.fetchFn(
      this.url(`/api/graph/entity/${encodeURIComponent(entityId)}`),
    );
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, payload.error ?? "entity lookup failed");
    }
    return payload as EntityCard;
  }

  async listReports(): Promise<string[]> {
    const response = await this.fetchFn(this.url("/api/reports"));
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, payload.error ?? "report listing failed");
    }
    return payload.runs as string[];
  }

  async report(runId: string): Promise<Report> {
    const response = await this.fetchFn(
      this.url(`/api/reports/${encodeURIComponent(runId)}`),
    );
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, payload.error ?? `no report ${runId}`);
    }
    return payload as Report;
  }

  async health(): Promise<{ status: string; generation_id: string | null }> {
    const response = await this.fetchFn(this.url("/health"));
    return (await response.json()) as { status: string; generation_id: string | null };
  }
}
