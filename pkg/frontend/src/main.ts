/** Application bootstrap: login, explorer, and the query builder. */

import { ApiError, AtlasApi } from "./api.js";
import { Explorer, QueryBuilder, type BuilderOperator, type Tab } from "./state.js";
import { renderBuilder, renderExplorer, renderLogin, type BuilderHandlers } from "./views.js";

function download(blob: Blob, filename: string): void {
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = filename;
  anchor.click();
  URL.revokeObjectURL(url);
}

async function start(token: string): Promise<void> {
  const api = new AtlasApi(window.location.origin, token);
  try {
    await api.health();
    await api.listDatasets(); // verifies the token before leaving the login screen
  } catch (error) {
    if (error instanceof ApiError && error.status === 401) {
      boot(error.message);
      return;
    }
    throw error;
  }

  const root = document.getElementById("app")!;
  root.textContent = "";
  const explorerContainer = document.createElement("div");
  explorerContainer.id = "explorer";
  const builderContainer = document.createElement("div");
  builderContainer.id = "builder";
  root.append(explorerContainer, builderContainer);

  const explorer = new Explorer(api);
  explorer.onChange(() =>
    renderExplorer(document, explorerContainer, explorer.state, {
      selectPipeline: (id) => void explorer.selectPipeline(id),
    }),
  );

  const builder = new QueryBuilder(api);
  const handlers: BuilderHandlers = {
    selectDataset: (id) => void builder.selectDataset(id),
    selectSubdataset: (id) => void builder.selectSubdataset(id),
    clickVariable: (id) => void builder.clickVariable(id),
    toggleFullMetadata: () => builder.toggleFullMetadata(),
    addPredicate: (variableId, op, operand) =>
      builder.addPredicate(variableId, op as BuilderOperator, operand),
    removePredicate: (id) => builder.removePredicate(id),
    startAgain: () => builder.startAgain(),
    search: () => void builder.search(),
    copySql: () => void builder.copySqlToAdvanced(),
    setTab: (tab: Tab) => builder.setTab(tab),
    setAdvancedSql: (sql) => builder.setAdvancedSql(sql),
    runAdvanced: () => void builder.runAdvanced(),
    runPredefined: (queryId, params) => void builder.runPredefined(queryId, params),
    goToPage: (delta) => void builder.goToPage(delta),
    exportResult: (format) =>
      void builder.exportCurrent(format).then((result) => {
        if (result) download(result.blob, result.filename);
      }),
    dismissError: () => builder.dismissError(),
  };
  builder.onChange(() => {
    if (builder.state.needsLogin) {
      boot("your session has expired; sign in again");
      return;
    }
    renderBuilder(document, builderContainer, builder.state, handlers);
  });

  await explorer.load();
  await builder.loadCatalog();
  renderBuilder(document, builderContainer, builder.state, handlers);
}

function boot(notice?: string): void {
  const root = document.getElementById("app")!;
  root.textContent = "";
  if (notice) {
    const banner = document.createElement("div");
    banner.className = "error-banner";
    banner.textContent = notice;
    root.appendChild(banner);
  }
  root.appendChild(
    renderLogin(document, (token) => {
      void start(token);
    }),
  );
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
