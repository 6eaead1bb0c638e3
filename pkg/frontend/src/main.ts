// Operator console wiring: poll the service, render panels, post actions.

import { ApiError, Client } from "./api.js";
import { cellViews, heatColor } from "./confusion.js";
import {
  draftFromSuggestion,
  emptyDraft,
  initialState,
  reduce,
  type ViewState,
} from "./state.js";
import { buildTimeline } from "./timeline.js";
import { availableBins, loadTriptych } from "./triptych.js";
import { BACKGROUND, type SuggestionsResponse } from "./types.js";
import { validateDraft } from "./validation.js";

const POLL_MS = 1000;

function el(tag: string, attrs: Record<string, string> = {}, ...children: (Node | string)[]) {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  for (const child of children) node.append(child);
  return node;
}

export class Console {
  state: ViewState = initialState();
  client: Client;
  private root: HTMLElement;
  private suggestions: SuggestionsResponse | null = null;

  constructor(root: HTMLElement, client: Client = new Client("")) {
    this.root = root;
    this.client = client;
  }

  async start(): Promise<void> {
    await this.refresh();
    setInterval(() => void this.refresh(), POLL_MS);
  }

  async refresh(): Promise<void> {
    try {
      const session = await this.client.getSession();
      this.state = reduce(this.state, { kind: "snapshot", session });
      await this.render();
    } catch (err) {
      this.state = reduce(this.state, { kind: "banner", message: String(err) });
    }
  }

  private banner(message: string) {
    this.state = reduce(this.state, { kind: "banner", message });
  }

  async onCellClick(truth: string, predicted: string): Promise<void> {
    try {
      await this.client.postTarget(truth, predicted);
      this.banner(`target set: ${truth} -> ${predicted}`);
      await this.refresh();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.banner(`not selectable now: ${err.message}`);
      } else {
        this.banner(String(err));
      }
    }
  }

  async onSubmitModifications(): Promise<void> {
    const errors = validateDraft(this.state.draft);
    if (errors.length) {
      this.state = reduce(this.state, { kind: "form_errors", errors });
      await this.render();
      return;
    }
    try {
      await this.client.postModifications([this.state.draft]);
      await this.client.postStep();
      this.state = reduce(this.state, { kind: "edit_draft", patch: emptyDraft() });
      this.banner("modification submitted");
      await this.refresh();
    } catch (err) {
      this.banner(String(err));
    }
  }

  async onStep(): Promise<void> {
    try {
      const result = await this.client.postStep();
      this.banner(result.job ? `job ${result.job} started` : `advanced past ${result.step}`);
      await this.refresh();
    } catch (err) {
      this.banner(String(err));
    }
  }

  private async render(): Promise<void> {
    const session = this.state.session;
    this.root.replaceChildren();
    if (!session?.state) {
      this.root.append(el("p", {}, "no session; initialize a workspace first"));
      return;
    }
    const head = el("div", { class: "head" });
    head.append(
      el("h1", {}, "synthloop console"),
      el(
        "p",
        {},
        `step: ${session.state.step} | version: ${session.state.active_version} | iteration: ${session.state.iteration}`,
      ),
    );
    if (session.job) {
      head.append(el("p", { class: `job ${session.job.state}` }, `job ${session.job.kind}: ${session.job.state}`));
    }
    if (this.state.banner) head.append(el("p", { class: "banner" }, this.state.banner));
    const stepButton = el("button", { id: "step" }, "run next step") as HTMLButtonElement;
    stepButton.onclick = () => void this.onStep();
    head.append(stepButton);
    this.root.append(head);

    await this.renderConfusion();
    await this.renderTriptych();
    await this.renderTimeline();
  }

  private async renderConfusion(): Promise<void> {
    const session = this.state.session!;
    const version = session.state!.active_version;
    let confusion;
    try {
      confusion = await this.client.getConfusion(version, "avg");
    } catch {
      this.root.append(el("p", {}, "confusion matrix not available yet"));
      return;
    }
    const target = session.state!.target;
    const table = el("table", { class: "confusion" });
    const headRow = el("tr", {}, el("th", {}, "truth \\ predicted"));
    for (const cls of confusion.class_order) headRow.append(el("th", {}, cls));
    table.append(headRow);
    const views = cellViews(confusion, target);
    for (let i = 0; i < confusion.class_order.length; i++) {
      const row = el("tr", {}, el("th", {}, confusion.class_order[i]));
      for (let j = 0; j < confusion.class_order.length; j++) {
        const cell = views[i * confusion.class_order.length + j];
        const td = el("td", {
          class: `cell${cell.clickable ? " clickable" : ""}${cell.selected ? " selected" : ""}`,
          style: `background:${heatColor(cell.intensity)}`,
          title: cell.clickable ? `${cell.truth} misclassified as ${cell.predicted}` : "not selectable",
        });
        td.textContent = cell.value.toFixed(1);
        if (cell.clickable) {
          td.onclick = () => void this.onCellClick(cell.truth, cell.predicted);
        }
        row.append(td);
      }
      table.append(row);
    }
    this.root.append(el("h2", {}, "seed-averaged confusion"), table);
  }

  private async renderTriptych(): Promise<void> {
    const session = this.state.session!;
    const target = session.state!.target;
    if (!target || !session.state!.last_bundle) {
      this.root.append(el("p", {}, "run Diagnose to see saliency comparisons"));
      return;
    }
    try {
      this.suggestions = await this.client.getSuggestions();
    } catch {
      this.root.append(el("p", {}, "diagnostic bundle missing"));
      return;
    }
    const bins = availableBins(this.suggestions);
    if (!bins.length) {
      this.root.append(el("p", { class: "warning" }, this.suggestions.warning ?? "no eligible bins"));
      return;
    }
    const bin = this.state.selectedBin ?? bins[0];
    const slider = el("input", {
      type: "range",
      min: String(0),
      max: String(bins.length - 1),
      value: String(Math.max(0, bins.indexOf(bin))),
    }) as HTMLInputElement;
    slider.oninput = () => {
      this.state = reduce(this.state, { kind: "select_bin", bin: bins[Number(slider.value)] });
      void this.render();
    };
    const view = await loadTriptych(this.client, target as never, this.suggestions, bin);
    const strip = el("div", { class: "triptych" });
    for (const panel of view.panels) {
      strip.append(
        el(
          "figure",
          {},
          el("img", { src: panel.imageUrl, alt: panel.title }),
          el("figcaption", {}, `${panel.title} (${panel.caption})`),
        ),
      );
    }
    const suggestionList = el("ul", { class: "suggestions" });
    view.suggestions.forEach((s, idx) => {
      const btn = el("button", {}, `${s.kind} feature on ${s.owning_class} (${s.cells.length} cells)`) as HTMLButtonElement;
      btn.onclick = () => {
        const label = `v${session.state!.iteration + 1}-${idx}`;
        const draft = draftFromSuggestion(s, label, []);
        this.state = reduce(this.state, { kind: "suggestion_prefill", draft });
        void this.render();
      };
      suggestionList.append(el("li", {}, btn));
    });
    this.root.append(el("h2", {}, `saliency triptych (bin ${bin})`), slider, strip, suggestionList);
    this.renderForm();
  }

  private renderForm(): void {
    const d = this.state.draft;
    const form = el("div", { class: "modform" });
    const fields: [string, string, string][] = [
      ["target_class", "text", d.target_class],
      ["action", "text", d.action],
      ["value", "number", String(d.value)],
      ["kind", "text", d.kind],
      ["new_version_label", "text", d.new_version_label],
      ["region_tags", "text", d.region_tags.join(",")],
    ];
    for (const [name, type, value] of fields) {
      const input = el("input", { name, type, value }) as HTMLInputElement;
      input.onchange = () => {
        const patch: Record<string, unknown> = {};
        if (name === "value") patch[name] = Number(input.value);
        else if (name === "region_tags") patch[name] = input.value.split(",").filter(Boolean);
        else patch[name] = input.value;
        this.state = reduce(this.state, { kind: "edit_draft", patch });
      };
      const error = this.state.formErrors.find((e) => e.field === name);
      form.append(
        el("label", {}, name, input, error ? el("span", { class: "error" }, error.message) : ""),
      );
    }
    const submit = el("button", { id: "submit-mod" }, "apply modification") as HTMLButtonElement;
    submit.onclick = () => void this.onSubmitModifications();
    form.append(submit);
    this.root.append(el("h2", {}, "modification form"), form);
  }

  private async renderTimeline(): Promise<void> {
    let metrics;
    try {
      metrics = await this.client.getMetrics();
    } catch {
      return;
    }
    const list = el("ol", { class: "timeline" });
    for (const node of buildTimeline(metrics)) {
      const seeds = node.perSeed.map((p) => `${p.seed}:${(p.map50 * 100).toFixed(1)}%`).join(" ");
      list.append(
        el(
          "li",
          { style: `margin-left:${node.depth * 16}px` },
          `${node.version} (from ${node.parent ?? "-"}) mean ${node.meanLabel} [${seeds}] ${node.specSummaries.join("; ")}`,
        ),
      );
    }
    this.root.append(el("h2", {}, "run timeline"), list);
  }
}

export function mount(): void {
  const root = document.getElementById("app");
  if (root) void new Console(root).start();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount();
}
