/**
 * Typed client for the atlas HTTP API.
 *
 * Every call carries the bearer token handed over at login; failures are
 * surfaced as ApiError with the server's {code, message} body so views can
 * show the human-readable message verbatim.
 */

export interface DatasetInfo {
  id: number;
  name: string;
  root_lfn: string;
  owner: string;
  created_on: string;
}

export interface DatasetCategory {
  id: number;
  name: string;
  description: string;
  datasets: DatasetInfo[];
}

export interface SubDataset {
  id: number;
  name: string;
}

export interface VariableInfo {
  id: number;
  name: string;
  value_kind: "numeric" | "text" | "date";
  description: string;
}

export interface VariableDictionary {
  variable_id: number;
  name: string;
  description: string;
  value_kind: string;
  comments: string;
  codes: Record<string, string>;
}

export interface PredicatePayload {
  variable_id: number;
  op: string;
  operand: string | string[];
  combinator?: string;
}

export interface QueryPayload {
  dataset_id: number;
  assessment_type_id?: number | null;
  predicates: PredicatePayload[];
}

export interface ResultPage {
  records: Record<string, unknown>[];
  total: number;
  page: number;
  page_size: number;
  elapsed_ms: number;
}

export interface PipelineRow {
  id: number;
  name: string;
  lfn: string;
  version: string;
  description: string;
  owner: string;
}

export interface AlgorithmRow {
  id: number;
  name: string;
  lfn: string;
  owner: string;
  position: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export const DEFAULT_PAGE_SIZE = 300;

/** The surface the state layer needs; AtlasApi is the HTTP implementation. */
export interface AtlasClient {
  health(): Promise<{ status: string }>;
  listDatasets(): Promise<DatasetCategory[]>;
  listSubdatasets(datasetId: number): Promise<SubDataset[]>;
  listVariables(subdatasetId: number): Promise<VariableInfo[]>;
  dictionary(variableId: number): Promise<VariableDictionary>;
  query(payload: QueryPayload, page?: number, pageSize?: number): Promise<ResultPage>;
  sql(sql: string, page?: number, pageSize?: number): Promise<ResultPage>;
  copySql(payload: QueryPayload): Promise<{ sql: string }>;
  predefined(
    queryId: string,
    params?: Record<string, unknown>,
    page?: number,
    pageSize?: number,
  ): Promise<ResultPage>;
  pipelines(nameContains?: string, owner?: string): Promise<ResultPage>;
  algorithms(pipelineId: number): Promise<AlgorithmRow[]>;
  exportResult(
    format: "xml" | "csv",
    payload: QueryPayload,
  ): Promise<{ blob: Blob; filename: string }>;
}

export class AtlasApi implements AtlasClient {
  constructor(
    readonly baseUrl: string,
    private token: string | null = null,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    query?: Record<string, string>,
  ): Promise<T> {
    const response = await this.rawRequest(method, path, body, query);
    return (await response.json()) as T;
  }

  private async rawRequest(
    method: string,
    path: string,
    body?: unknown,
    query?: Record<string, string>,
  ): Promise<Response> {
    const url = new URL(path, this.baseUrl);
    for (const [key, value] of Object.entries(query ?? {})) {
      url.searchParams.set(key, value);
    }
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const response = await this.fetchImpl(url.toString(), {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = `HTTP ${response.status}`;
      let message = response.statusText;
      try {
        const payload = (await response.json()) as { code?: string; message?: string };
        if (payload.code) code = payload.code;
        if (payload.message) message = payload.message;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message);
    }
    return response;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  listDatasets(): Promise<DatasetCategory[]> {
    return this.request("GET", "/datasets");
  }

  listSubdatasets(datasetId: number): Promise<SubDataset[]> {
    return this.request("GET", `/datasets/${datasetId}/subdatasets`);
  }

  listVariables(subdatasetId: number): Promise<VariableInfo[]> {
    return this.request("GET", `/subdatasets/${subdatasetId}/variables`);
  }

  dictionary(variableId: number): Promise<VariableDictionary> {
    return this.request("GET", `/variables/${variableId}/dictionary`);
  }

  query(payload: QueryPayload, page = 0, pageSize = DEFAULT_PAGE_SIZE): Promise<ResultPage> {
    return this.request("POST", "/query", payload, {
      page: String(page),
      page_size: String(pageSize),
    });
  }

  sql(sql: string, page = 0, pageSize = DEFAULT_PAGE_SIZE): Promise<ResultPage> {
    return this.request("POST", "/query/sql", { sql }, {
      page: String(page),
      page_size: String(pageSize),
    });
  }

  copySql(payload: QueryPayload): Promise<{ sql: string }> {
    return this.request("POST", "/query/copysql", payload);
  }

  predefined(
    queryId: string,
    params: Record<string, unknown> = {},
    page = 0,
    pageSize = DEFAULT_PAGE_SIZE,
  ): Promise<ResultPage> {
    return this.request("POST", "/query/predefined", { query_id: queryId, params }, {
      page: String(page),
      page_size: String(pageSize),
    });
  }

  pipelines(nameContains?: string, owner?: string): Promise<ResultPage> {
    const query: Record<string, string> = {};
    if (nameContains) query["name"] = nameContains;
    if (owner) query["owner"] = owner;
    return this.request("GET", "/pipelines", undefined, query);
  }

  algorithms(pipelineId: number): Promise<AlgorithmRow[]> {
    return this.request("GET", `/pipelines/${pipelineId}/algorithms`);
  }

  /** Fetch an export as a blob plus its server-stamped filename. */
  async exportResult(
    format: "xml" | "csv",
    payload: QueryPayload,
  ): Promise<{ blob: Blob; filename: string }> {
    const response = await this.rawRequest("GET", "/export", undefined, {
      format,
      filter: JSON.stringify(payload),
    });
    const disposition = response.headers.get("content-disposition") ?? "";
    const match = /filename="([^"]+)"/.exec(disposition);
    return { blob: await response.blob(), filename: match?.[1] ?? `export.${format}` };
  }
}
