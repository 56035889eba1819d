/**
 * Framework-agnostic state for the explorer and the three-tab query builder.
 *
 * Controllers hold plain state objects and notify a single onChange listener
 * after every transition; views re-render from state. At most one search is
 * live per tab: every request carries a sequence number and stale responses
 * are discarded.
 */

import {
  ApiError,
  DEFAULT_PAGE_SIZE,
  type AtlasClient,
  type AlgorithmRow,
  type DatasetCategory,
  type PipelineRow,
  type QueryPayload,
  type ResultPage,
  type SubDataset,
  type VariableDictionary,
  type VariableInfo,
} from "./api.js";

export type Tab = "predefined" | "clinical" | "advanced";

/** Operators offered by the visual builder; the advanced tab covers the rest. */
export const BUILDER_OPERATORS = ["EQ", "LT", "GT", "LIKE", "EXACT"] as const;
export type BuilderOperator = (typeof BUILDER_OPERATORS)[number];

export interface PredicateDraft {
  id: number;
  variableId: number;
  variableName: string;
  op: BuilderOperator;
  operand: string;
}

export interface ResultView {
  columns: string[];
  rows: Record<string, unknown>[];
  total: number;
  page: number;
  pageSize: number;
  elapsedMs: number;
  /** banner bounds: "Total Records N - Displaying from - to" */
  from: number;
  to: number;
}

export function toResultView(page: ResultPage, columns?: string[]): ResultView {
  const from = Math.min(page.page * page.page_size, page.total);
  return {
    columns: columns ?? (page.records.length > 0 ? Object.keys(page.records[0]!) : []),
    rows: page.records,
    total: page.total,
    page: page.page,
    pageSize: page.page_size,
    elapsedMs: page.elapsed_ms,
    from,
    to: from + page.records.length,
  };
}

export function bannerText(view: ResultView): string {
  return `Total Records ${view.total} - Displaying ${view.from} - ${view.to}`;
}

export interface BuilderState {
  categories: DatasetCategory[];
  selectedDatasetId: number | null;
  subdatasets: SubDataset[];
  selectedSubdatasetId: number | null;
  variables: VariableInfo[];
  dictionary: VariableDictionary | null;
  showFullMetadata: boolean;
  predicates: PredicateDraft[];
  advancedSql: string;
  lastCopiedSql: string | null;
  result: ResultView | null;
  activeTab: Tab;
  error: string | null;
  needsLogin: boolean;
  loading: boolean;
}

type Listener = () => void;

/** What produced the current result, so pagination can re-run it. */
type LastRun =
  | { kind: "builder"; payload: QueryPayload; columns: string[] }
  | { kind: "advanced"; sql: string }
  | { kind: "predefined"; queryId: string; params: Record<string, unknown> };

export class QueryBuilder {
  readonly state: BuilderState = {
    categories: [],
    selectedDatasetId: null,
    subdatasets: [],
    selectedSubdatasetId: null,
    variables: [],
    dictionary: null,
    showFullMetadata: false,
    predicates: [],
    advancedSql: "",
    lastCopiedSql: null,
    result: null,
    activeTab: "clinical",
    error: null,
    needsLogin: false,
    loading: false,
  };

  private listener: Listener = () => {};
  private nextPredicateId = 1;
  private searchSeq = 0;
  private lastRun: LastRun | null = null;

  constructor(
    private readonly api: AtlasClient,
    readonly pageSize: number = DEFAULT_PAGE_SIZE,
  ) {}

  onChange(listener: Listener): void {
    this.listener = listener;
  }

  private notify(): void {
    this.listener();
  }

  private fail(error: unknown): void {
    if (error instanceof ApiError) {
      this.state.error = error.message;
      if (error.status === 401) this.state.needsLogin = true;
    } else {
      this.state.error = String(error);
    }
    this.state.loading = false;
    this.notify();
  }

  dismissError(): void {
    this.state.error = null;
    this.notify();
  }

  setTab(tab: Tab): void {
    this.state.activeTab = tab;
    this.notify();
  }

  async loadCatalog(): Promise<void> {
    try {
      this.state.categories = await this.api.listDatasets();
      this.notify();
    } catch (error) {
      this.fail(error);
    }
  }

  async selectDataset(datasetId: number): Promise<void> {
    this.state.selectedDatasetId = datasetId;
    this.state.subdatasets = [];
    this.state.selectedSubdatasetId = null;
    this.state.variables = [];
    this.state.predicates = [];
    this.state.dictionary = null;
    this.notify();
    try {
      const subdatasets = await this.api.listSubdatasets(datasetId);
      if (this.state.selectedDatasetId !== datasetId) return; // stale
      this.state.subdatasets = subdatasets;
      this.notify();
      if (subdatasets.length === 1) {
        await this.selectSubdataset(subdatasets[0]!.id);
      }
    } catch (error) {
      this.fail(error);
    }
  }

  async selectSubdataset(subdatasetId: number): Promise<void> {
    this.state.selectedSubdatasetId = subdatasetId;
    this.state.variables = [];
    this.state.predicates = [];
    this.state.dictionary = null;
    this.notify();
    try {
      const variables = await this.api.listVariables(subdatasetId);
      if (this.state.selectedSubdatasetId !== subdatasetId) return; // stale
      this.state.variables = variables;
      this.notify();
    } catch (error) {
      this.fail(error);
    }
  }

  /** Clicking a variable shows its dictionary entry inline. */
  async clickVariable(variableId: number): Promise<void> {
    this.state.showFullMetadata = false;
    try {
      const dictionary = await this.api.dictionary(variableId);
      this.state.dictionary = dictionary;
      this.notify();
    } catch (error) {
      this.fail(error);
    }
  }

  /** The "?" button: full metadata (type, comments) next to the codes. */
  toggleFullMetadata(): void {
    this.state.showFullMetadata = !this.state.showFullMetadata;
    this.notify();
  }

  addPredicate(variableId: number, op: BuilderOperator, operand: string): void {
    const variable = this.state.variables.find((v) => v.id === variableId);
    if (!variable) {
      this.state.error = "pick a variable from the selected sub-dataset";
      this.notify();
      return;
    }
    if (!operand.trim()) {
      this.state.error = "the search value must not be empty";
      this.notify();
      return;
    }
    this.state.predicates.push({
      id: this.nextPredicateId++,
      variableId,
      variableName: variable.name,
      op,
      operand: operand.trim(),
    });
    this.state.error = null;
    this.notify();
  }

  removePredicate(predicateId: number): void {
    this.state.predicates = this.state.predicates.filter((p) => p.id !== predicateId);
    this.notify();
  }

  startAgain(): void {
    this.state.selectedDatasetId = null;
    this.state.subdatasets = [];
    this.state.selectedSubdatasetId = null;
    this.state.variables = [];
    this.state.predicates = [];
    this.state.dictionary = null;
    this.state.result = null;
    this.state.advancedSql = "";
    this.state.lastCopiedSql = null;
    this.state.error = null;
    this.lastRun = null;
    this.notify();
  }

  buildPayload(): QueryPayload | null {
    if (this.state.selectedDatasetId === null) return null;
    return {
      dataset_id: this.state.selectedDatasetId,
      assessment_type_id: this.state.selectedSubdatasetId,
      predicates: this.state.predicates.map((p) => ({
        variable_id: p.variableId,
        op: p.op,
        operand: p.operand,
        combinator: "AND",
      })),
    };
  }

  async search(page = 0): Promise<void> {
    const payload = this.buildPayload();
    if (!payload) {
      this.state.error = "select a dataset first";
      this.notify();
      return;
    }
    const columns = [
      "imagefile_name",
      "lfn",
      ...new Set(this.state.predicates.map((p) => p.variableName)),
    ];
    this.lastRun = { kind: "builder", payload, columns };
    await this.runSearch(page, () => this.api.query(payload, page, this.pageSize), columns);
  }

  async runAdvanced(page = 0): Promise<void> {
    const sql = this.state.advancedSql.trim();
    if (!sql) {
      this.state.error = "enter a SELECT statement first";
      this.notify();
      return;
    }
    this.lastRun = { kind: "advanced", sql };
    await this.runSearch(page, () => this.api.sql(sql, page, this.pageSize));
  }

  async runPredefined(queryId: string, params: Record<string, unknown>, page = 0): Promise<void> {
    this.lastRun = { kind: "predefined", queryId, params };
    await this.runSearch(page, () => this.api.predefined(queryId, params, page, this.pageSize));
  }

  private async runSearch(
    page: number,
    call: () => Promise<ResultPage>,
    columns?: string[],
  ): Promise<void> {
    const seq = ++this.searchSeq;
    this.state.loading = true;
    this.state.error = null;
    this.notify();
    try {
      const result = await call();
      if (seq !== this.searchSeq) return; // a newer search superseded this one
      this.state.result = toResultView(result, columns);
      this.state.loading = false;
      this.notify();
    } catch (error) {
      if (seq !== this.searchSeq) return;
      this.fail(error);
    }
  }

  canPage(delta: number): boolean {
    const result = this.state.result;
    if (!result || !this.lastRun) return false;
    const target = result.page + delta;
    if (target < 0) return false;
    return target * result.pageSize < Math.max(result.total, 1) || target === 0;
  }

  async goToPage(delta: number): Promise<void> {
    if (!this.canPage(delta) || !this.lastRun) return;
    const target = (this.state.result?.page ?? 0) + delta;
    const run = this.lastRun;
    if (run.kind === "builder") {
      await this.runSearch(target, () => this.api.query(run.payload, target, this.pageSize), run.columns);
    } else if (run.kind === "advanced") {
      await this.runSearch(target, () => this.api.sql(run.sql, target, this.pageSize));
    } else {
      await this.runSearch(target, () => this.api.predefined(run.queryId, run.params, target, this.pageSize));
    }
  }

  /** Copy SQL: fetch the inlined statement and land in the advanced tab. */
  async copySqlToAdvanced(): Promise<void> {
    const payload = this.buildPayload();
    if (!payload) {
      this.state.error = "select a dataset first";
      this.notify();
      return;
    }
    try {
      const { sql } = await this.api.copySql(payload);
      this.state.lastCopiedSql = sql;
      this.state.advancedSql = sql;
      this.state.activeTab = "advanced";
      this.notify();
    } catch (error) {
      this.fail(error);
    }
  }

  setAdvancedSql(sql: string): void {
    this.state.advancedSql = sql;
    this.notify();
  }

  async exportCurrent(format: "xml" | "csv"): Promise<{ blob: Blob; filename: string } | null> {
    const payload = this.buildPayload();
    if (!payload || !this.state.result) return null;
    try {
      return await this.api.exportResult(format, payload);
    } catch (error) {
      this.fail(error);
      return null;
    }
  }
}

// -- explorer ------------------------------------------------------------

export interface ExplorerState {
  categories: DatasetCategory[];
  pipelines: PipelineRow[];
  pipelineTotal: number;
  selectedPipelineId: number | null;
  algorithms: AlgorithmRow[];
  recordCount: number | null;
  elapsedMs: number | null;
  error: string | null;
}

export class Explorer {
  readonly state: ExplorerState = {
    categories: [],
    pipelines: [],
    pipelineTotal: 0,
    selectedPipelineId: null,
    algorithms: [],
    recordCount: null,
    elapsedMs: null,
    error: null,
  };

  private listener: Listener = () => {};

  constructor(private readonly api: AtlasClient) {}

  onChange(listener: Listener): void {
    this.listener = listener;
  }

  private notify(): void {
    this.listener();
  }

  async load(): Promise<void> {
    try {
      this.state.categories = await this.api.listDatasets();
      const page = await this.api.pipelines();
      this.state.pipelines = page.records as unknown as PipelineRow[];
      this.state.pipelineTotal = page.total;
      this.state.recordCount = page.total;
      this.state.elapsedMs = page.elapsed_ms;
      this.state.error = null;
    } catch (error) {
      this.state.error = error instanceof ApiError ? error.message : String(error);
    }
    this.notify();
  }

  /** Selecting Algorithms after selecting a Pipeline shows the linkage. */
  async selectPipeline(pipelineId: number): Promise<void> {
    this.state.selectedPipelineId = pipelineId;
    try {
      const started = performance.now();
      this.state.algorithms = await this.api.algorithms(pipelineId);
      this.state.elapsedMs = performance.now() - started;
      this.state.recordCount = this.state.algorithms.length;
      this.state.error = null;
    } catch (error) {
      this.state.error = error instanceof ApiError ? error.message : String(error);
    }
    this.notify();
  }
}
