/**
 * DOM rendering for the login screen, explorer, and query builder.
 *
 * Views are plain functions from state to elements; controllers re-render on
 * every state change. No framework, no virtual DOM: result tables are the
 * only hot spot and they are bounded by the page size.
 */

import type { AlgorithmRow, VariableDictionary } from "./api.js";
import {
  BUILDER_OPERATORS,
  bannerText,
  type BuilderOperator,
  type BuilderState,
  type ExplorerState,
  type ResultView,
  type Tab,
} from "./state.js";

export interface BuilderHandlers {
  selectDataset(id: number): void;
  selectSubdataset(id: number): void;
  clickVariable(id: number): void;
  toggleFullMetadata(): void;
  addPredicate(variableId: number, op: BuilderOperator, operand: string): void;
  removePredicate(id: number): void;
  startAgain(): void;
  search(): void;
  copySql(): void;
  setTab(tab: Tab): void;
  setAdvancedSql(sql: string): void;
  runAdvanced(): void;
  runPredefined(queryId: string, params: Record<string, unknown>): void;
  goToPage(delta: number): void;
  exportResult(format: "xml" | "csv"): void;
  dismissError(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderLogin(doc: Document, onSubmit: (token: string) => void): HTMLElement {
  const panel = el(doc, "div", { class: "login-panel" });
  panel.appendChild(el(doc, "h2", {}, "Sign in"));
  panel.appendChild(
    el(doc, "p", {}, "Paste your access token; it is kept in memory for this session only."),
  );
  const input = el(doc, "input", { type: "password", id: "token-input", placeholder: "bearer token" });
  const button = el(doc, "button", { id: "login-button" }, "Sign in");
  button.addEventListener("click", () => {
    if (input.value.trim()) onSubmit(input.value.trim());
  });
  panel.append(input, button);
  return panel;
}

export function renderErrorBanner(
  doc: Document,
  message: string,
  onDismiss: () => void,
): HTMLElement {
  const banner = el(doc, "div", { class: "error-banner", role: "alert" });
  banner.appendChild(el(doc, "span", { class: "error-message" }, message));
  const dismiss = el(doc, "button", { class: "dismiss" }, "✕");
  dismiss.addEventListener("click", onDismiss);
  banner.appendChild(dismiss);
  return banner;
}

export function renderDictionaryPanel(
  doc: Document,
  dictionary: VariableDictionary,
  showFullMetadata: boolean,
  onToggleMetadata: () => void,
): HTMLElement {
  const panel = el(doc, "div", { class: "dictionary-panel" });
  const heading = el(doc, "div", { class: "dictionary-heading" });
  heading.appendChild(el(doc, "strong", {}, dictionary.name));
  heading.appendChild(el(doc, "span", {}, " Desc./Question: " + dictionary.description));
  const more = el(doc, "button", { class: "metadata-toggle", title: "full metadata" }, "?");
  more.addEventListener("click", onToggleMetadata);
  heading.appendChild(more);
  panel.appendChild(heading);
  const codes = el(doc, "ul", { class: "code-list" });
  for (const [code, label] of Object.entries(dictionary.codes)) {
    codes.appendChild(el(doc, "li", { class: "code-entry" }, `${code} ='${label}'`));
  }
  panel.appendChild(codes);
  if (showFullMetadata) {
    const meta = el(doc, "dl", { class: "full-metadata" });
    meta.appendChild(el(doc, "dt", {}, "Variable Type"));
    meta.appendChild(el(doc, "dd", {}, dictionary.value_kind));
    meta.appendChild(el(doc, "dt", {}, "Comments"));
    meta.appendChild(el(doc, "dd", {}, dictionary.comments || "(none)"));
    panel.appendChild(meta);
  }
  return panel;
}

export function renderResultTable(
  doc: Document,
  view: ResultView,
  handlers: Pick<BuilderHandlers, "goToPage" | "exportResult">,
): HTMLElement {
  const wrap = el(doc, "div", { class: "result-view" });
  wrap.appendChild(el(doc, "div", { class: "result-banner" }, bannerText(view)));
  wrap.appendChild(
    el(doc, "div", { class: "result-elapsed" }, `query response time ${view.elapsedMs.toFixed(1)} ms`),
  );
  const table = el(doc, "table", { class: "result-table" });
  const head = el(doc, "tr");
  for (const column of view.columns) head.appendChild(el(doc, "th", {}, column));
  table.appendChild(head);
  for (const row of view.rows) {
    const tr = el(doc, "tr");
    for (const column of view.columns) {
      tr.appendChild(el(doc, "td", {}, String(row[column] ?? "")));
    }
    table.appendChild(tr);
  }
  wrap.appendChild(table);

  const pager = el(doc, "div", { class: "pager" });
  const prev = el(doc, "button", { class: "page-prev" }, "← prev");
  prev.addEventListener("click", () => handlers.goToPage(-1));
  const next = el(doc, "button", { class: "page-next" }, "next →");
  next.addEventListener("click", () => handlers.goToPage(1));
  pager.append(
    prev,
    el(doc, "span", { class: "page-indicator" }, `page ${view.page}`),
    next,
  );
  wrap.appendChild(pager);

  // export buttons appear only once a result is on screen
  const exports = el(doc, "div", { class: "export-buttons" });
  const csvButton = el(doc, "button", { class: "export-csv" }, "CSV Export");
  csvButton.addEventListener("click", () => handlers.exportResult("csv"));
  const xmlButton = el(doc, "button", { class: "export-xml" }, "XML Export");
  xmlButton.addEventListener("click", () => handlers.exportResult("xml"));
  exports.append(csvButton, xmlButton);
  wrap.appendChild(exports);
  return wrap;
}

function renderClinicalTab(
  doc: Document,
  state: BuilderState,
  handlers: BuilderHandlers,
): HTMLElement {
  const tab = el(doc, "div", { class: "tab-clinical" });

  const datasetRow = el(doc, "div", { class: "dataset-row" });
  datasetRow.appendChild(el(doc, "label", {}, "List of available neuro-science datasets: "));
  const datasetSelect = el(doc, "select", { id: "dataset-select" });
  datasetSelect.appendChild(el(doc, "option", { value: "" }, "select…"));
  for (const category of state.categories) {
    for (const dataset of category.datasets) {
      const option = el(doc, "option", { value: String(dataset.id) }, dataset.name);
      if (dataset.id === state.selectedDatasetId) option.setAttribute("selected", "");
      datasetSelect.appendChild(option);
    }
  }
  datasetSelect.addEventListener("change", () => {
    if (datasetSelect.value) handlers.selectDataset(Number(datasetSelect.value));
  });
  datasetRow.appendChild(datasetSelect);
  const reset = el(doc, "button", { id: "start-again" }, "Start again");
  reset.addEventListener("click", handlers.startAgain);
  datasetRow.appendChild(reset);
  tab.appendChild(datasetRow);

  if (state.subdatasets.length > 1) {
    const subRow = el(doc, "div", { class: "subdataset-row" });
    subRow.appendChild(el(doc, "label", {}, "Sub-dataset: "));
    const subSelect = el(doc, "select", { id: "subdataset-select" });
    subSelect.appendChild(el(doc, "option", { value: "" }, "select…"));
    for (const sub of state.subdatasets) {
      const option = el(doc, "option", { value: String(sub.id) }, sub.name);
      if (sub.id === state.selectedSubdatasetId) option.setAttribute("selected", "");
      subSelect.appendChild(option);
    }
    subSelect.addEventListener("change", () => {
      if (subSelect.value) handlers.selectSubdataset(Number(subSelect.value));
    });
    subRow.appendChild(subSelect);
    tab.appendChild(subRow);
  }

  if (state.variables.length > 0) {
    tab.appendChild(
      el(doc, "div", { class: "attributes-heading" }, "Neuro-patient attributes for the selected dataset:"),
    );
    const variableList = el(doc, "ul", { class: "variable-list" });
    for (const variable of state.variables) {
      const item = el(doc, "li", {});
      const link = el(doc, "button", { class: "variable-name", "data-variable": variable.name }, variable.name);
      link.addEventListener("click", () => handlers.clickVariable(variable.id));
      item.appendChild(link);
      variableList.appendChild(item);
    }
    tab.appendChild(variableList);

    const predicateForm = el(doc, "div", { class: "predicate-form" });
    const variableSelect = el(doc, "select", { id: "variable-select" });
    for (const variable of state.variables) {
      variableSelect.appendChild(el(doc, "option", { value: String(variable.id) }, variable.name));
    }
    const opSelect = el(doc, "select", { id: "op-select" });
    for (const op of BUILDER_OPERATORS) {
      opSelect.appendChild(el(doc, "option", { value: op }, op));
    }
    const operand = el(doc, "input", { id: "operand-input", placeholder: "value" });
    const add = el(doc, "button", { id: "add-predicate" }, "Add filter");
    add.addEventListener("click", () =>
      handlers.addPredicate(
        Number(variableSelect.value),
        opSelect.value as BuilderOperator,
        operand.value,
      ),
    );
    predicateForm.append(variableSelect, opSelect, operand, add);
    tab.appendChild(predicateForm);
  }

  if (state.dictionary) {
    tab.appendChild(
      renderDictionaryPanel(doc, state.dictionary, state.showFullMetadata, handlers.toggleFullMetadata),
    );
  }

  if (state.predicates.length > 0) {
    const list = el(doc, "ul", { class: "predicate-list" });
    for (const predicate of state.predicates) {
      const item = el(doc, "li", { class: "predicate-item" });
      item.appendChild(
        el(doc, "span", {}, `${predicate.variableName} ${predicate.op} ${predicate.operand}`),
      );
      const remove = el(doc, "button", { class: "remove-predicate", title: "remove" }, "\u{1F5D1}");
      remove.addEventListener("click", () => handlers.removePredicate(predicate.id));
      item.appendChild(remove);
      list.appendChild(item);
    }
    tab.appendChild(list);
  }

  if (state.selectedDatasetId !== null) {
    const actions = el(doc, "div", { class: "builder-actions" });
    const search = el(doc, "button", { id: "search-button" }, "Search");
    search.addEventListener("click", handlers.search);
    const copy = el(doc, "button", { id: "copy-sql-button" }, "Copy SQL");
    copy.addEventListener("click", handlers.copySql);
    actions.append(search, copy);
    tab.appendChild(actions);
  }
  return tab;
}

function renderAdvancedTab(
  doc: Document,
  state: BuilderState,
  handlers: BuilderHandlers,
): HTMLElement {
  const tab = el(doc, "div", { class: "tab-advanced" });
  tab.appendChild(
    el(doc, "p", {}, "Edit the WHERE clause of a copied query, or write a SELECT from scratch."),
  );
  const textarea = el(doc, "textarea", { id: "advanced-sql", rows: "6", cols: "100" });
  textarea.value = state.advancedSql;
  textarea.addEventListener("input", () => handlers.setAdvancedSql(textarea.value));
  tab.appendChild(textarea);
  const run = el(doc, "button", { id: "run-advanced" }, "Search");
  run.addEventListener("click", handlers.runAdvanced);
  tab.appendChild(run);
  return tab;
}

function renderPredefinedTab(
  doc: Document,
  state: BuilderState,
  handlers: BuilderHandlers,
): HTMLElement {
  const tab = el(doc, "div", { class: "tab-predefined" });
  tab.appendChild(el(doc, "label", {}, "Predefined query: "));
  const select = el(doc, "select", { id: "predefined-select" });
  for (const id of ["all_datasets", "all_imagefiles", "search_imagefiles", "search_imagefiles_in_dataset"]) {
    select.appendChild(el(doc, "option", { value: id }, id));
  }
  const needle = el(doc, "input", { id: "predefined-needle", placeholder: "image name or lfn fragment" });
  const run = el(doc, "button", { id: "run-predefined" }, "Run");
  run.addEventListener("click", () => {
    const params: Record<string, unknown> = {};
    if (select.value.startsWith("search_")) params["needle"] = needle.value;
    if (select.value === "search_imagefiles_in_dataset" && state.selectedDatasetId !== null) {
      params["dataset_id"] = state.selectedDatasetId;
    }
    handlers.runPredefined(select.value, params);
  });
  tab.append(select, needle, run);
  return tab;
}

export function renderBuilder(
  doc: Document,
  container: HTMLElement,
  state: BuilderState,
  handlers: BuilderHandlers,
): void {
  container.textContent = "";
  if (state.error) {
    container.appendChild(renderErrorBanner(doc, state.error, handlers.dismissError));
  }
  const tabs = el(doc, "div", { class: "tab-bar" });
  const labels: [Tab, string][] = [
    ["predefined", "Predefined Queries"],
    ["clinical", "Clinical Variables Search"],
    ["advanced", "Advanced Search"],
  ];
  for (const [tab, label] of labels) {
    const button = el(
      doc,
      "button",
      { class: state.activeTab === tab ? "tab active" : "tab", "data-tab": tab },
      label,
    );
    button.addEventListener("click", () => handlers.setTab(tab));
    tabs.appendChild(button);
  }
  container.appendChild(tabs);

  if (state.activeTab === "clinical") {
    container.appendChild(renderClinicalTab(doc, state, handlers));
  } else if (state.activeTab === "advanced") {
    container.appendChild(renderAdvancedTab(doc, state, handlers));
  } else {
    container.appendChild(renderPredefinedTab(doc, state, handlers));
  }

  if (state.loading) {
    container.appendChild(el(doc, "div", { class: "loading" }, "searching…"));
  }
  if (state.result) {
    container.appendChild(renderResultTable(doc, state.result, handlers));
  }
}

export interface ExplorerHandlers {
  selectPipeline(id: number): void;
}

export function renderExplorer(
  doc: Document,
  container: HTMLElement,
  state: ExplorerState,
  handlers: ExplorerHandlers,
): void {
  container.textContent = "";
  if (state.error) {
    container.appendChild(el(doc, "div", { class: "error-banner" }, state.error));
  }
  const datasets = el(doc, "div", { class: "explorer-datasets" });
  datasets.appendChild(el(doc, "h3", {}, "Datasets"));
  const datasetList = el(doc, "ul", {});
  let datasetCount = 0;
  for (const category of state.categories) {
    for (const dataset of category.datasets) {
      datasetList.appendChild(el(doc, "li", {}, `${category.name} / ${dataset.name}`));
      datasetCount += 1;
    }
  }
  if (datasetCount === 0) datasetList.appendChild(el(doc, "li", { class: "empty" }, "no datasets indexed yet"));
  datasets.appendChild(datasetList);
  container.appendChild(datasets);

  const pipelines = el(doc, "div", { class: "explorer-pipelines" });
  pipelines.appendChild(el(doc, "h3", {}, "Pipelines"));
  const pipelineList = el(doc, "ul", {});
  for (const pipeline of state.pipelines) {
    const item = el(doc, "li", {});
    const button = el(doc, "button", { class: "pipeline-name" }, `${pipeline.name} ${pipeline.version}`);
    button.addEventListener("click", () => handlers.selectPipeline(pipeline.id));
    item.appendChild(button);
    if (pipeline.id === state.selectedPipelineId) {
      const algorithms = el(doc, "ol", { class: "algorithm-list" });
      for (const algorithm of state.algorithms as AlgorithmRow[]) {
        algorithms.appendChild(el(doc, "li", {}, `${algorithm.name} (${algorithm.lfn})`));
      }
      item.appendChild(algorithms);
    }
    pipelineList.appendChild(item);
  }
  if (state.pipelines.length === 0) {
    pipelineList.appendChild(el(doc, "li", { class: "empty" }, "no pipelines indexed yet"));
  }
  pipelines.appendChild(pipelineList);
  container.appendChild(pipelines);

  if (state.recordCount !== null && state.elapsedMs !== null) {
    container.appendChild(
      el(
        doc,
        "div",
        { class: "explorer-stats" },
        `${state.recordCount} record(s) in ${state.elapsedMs.toFixed(1)} ms`,
      ),
    );
  }
}
