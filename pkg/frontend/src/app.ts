// Review-queue application: renders one alignment suggestion at a time with
// its two-column explanation, records keyboard decisions through the API,
// and keeps a session-local undo stack (undo posts an `unsure` revert).
//
// The app is a pure API client: every state change is exactly one POST, and
// a fresh page load rebuilds the whole view from GETs alone.

import { ApiError, type Client } from "./api.js";
import type {
  Decision,
  ExplanationRow,
  PairDetail,
  QueueItem,
  Stats,
} from "./types.js";

const QUEUE_LIMIT = 500;

type Child = Node | string;

function el(
  tag: string,
  attrs: Record<string, string> = {},
  children: Child[] = [],
): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  for (const c of children) {
    node.append(typeof c === "string" ? document.createTextNode(c) : c);
  }
  return node;
}

function featureCell(row: ExplanationRow | undefined): HTMLElement {
  const td = el("td", { class: "feat" });
  if (!row) return td;
  const [key, value, weight] = row;
  const pct = Math.max(0, Math.min(1, weight)) * 100;
  td.append(
    el("span", { class: "feat-text" }, [`${key}: ${value}`]),
    el("span", { class: "bar-track", title: weight.toFixed(4) }, [
      el("span", { class: "bar", style: `width: ${pct.toFixed(1)}%` }),
    ]),
  );
  return td;
}

export class App {
  items: QueueItem[] = [];
  idx = 0;
  detail: PairDetail | null = null;
  stats: Stats | null = null;
  confidentNext = false;
  annotator = "curator";
  inlineError: string | null = null;
  loadFailed = false;
  private undoStack: string[] = [];

  constructor(
    readonly root: HTMLElement,
    readonly client: Client,
  ) {}

  currentItem(): QueueItem | null {
    return this.items[this.idx] ?? null;
  }

  async load(): Promise<void> {
    this.loadFailed = false;
    this.inlineError = null;
    try {
      const page = await this.client.queue({ limit: QUEUE_LIMIT });
      this.items = page.items;
      this.stats = await this.client.stats();
      this.idx = Math.max(
        0,
        this.items.findIndex((it) => it.status === "pending"),
      );
      if (this.items.length > 0) {
        await this.showCurrent();
      } else {
        this.detail = null;
        this.render();
      }
    } catch {
      this.loadFailed = true;
      this.render();
    }
  }

  async showCurrent(): Promise<void> {
    const item = this.currentItem();
    if (!item) {
      this.detail = null;
      this.render();
      return;
    }
    try {
      this.detail = await this.client.pair(item.pair_id);
      this.render();
    } catch (err) {
      this.inlineError = err instanceof Error ? err.message : String(err);
      this.render();
    }
  }

  private nextPending(from: number): number | null {
    const n = this.items.length;
    for (let step = 1; step <= n; step++) {
      const i = (from + step) % n;
      if (this.items[i]?.status === "pending") return i;
    }
    return null;
  }

  async decide(decision: Decision): Promise<void> {
    const item = this.currentItem();
    if (!item) return;
    try {
      await this.client.decide(item.pair_id, {
        decision,
        annotator: this.annotator,
        confident: this.confidentNext,
      });
    } catch (err) {
      // failed decision: keep the item on screen with the error inline
      this.inlineError = err instanceof ApiError ? err.message : String(err);
      this.render();
      return;
    }
    item.status = "decided";
    this.undoStack.push(item.pair_id);
    this.confidentNext = false;
    this.inlineError = null;
    this.stats = await this.client.stats();
    const next = this.nextPending(this.idx);
    if (next !== null) this.idx = next;
    await this.showCurrent();
  }

  async undo(): Promise<void> {
    const pairId = this.undoStack.pop();
    if (!pairId) return;
    try {
      await this.client.decide(pairId, {
        decision: "unsure",
        annotator: this.annotator,
        confident: false,
      });
    } catch (err) {
      this.inlineError = err instanceof ApiError ? err.message : String(err);
      this.render();
      return;
    }
    const i = this.items.findIndex((it) => it.pair_id === pairId);
    if (i >= 0) this.idx = i;
    this.inlineError = null;
    this.stats = await this.client.stats();
    await this.showCurrent();
  }

  async move(delta: number): Promise<void> {
    if (this.items.length === 0) return;
    const next = Math.max(0, Math.min(this.items.length - 1, this.idx + delta));
    if (next === this.idx) return;
    this.idx = next;
    await this.showCurrent();
  }

  async handleKey(e: KeyboardEvent): Promise<void> {
    if (e.target instanceof HTMLInputElement) return;
    switch (e.key) {
      case "a":
        return this.decide("accept");
      case "r":
        return this.decide("reject");
      case "u":
        return this.decide("unsure");
      case "c":
        this.confidentNext = !this.confidentNext;
        this.render();
        return;
      case "z":
        return this.undo();
      case "j":
      case "ArrowRight":
        return this.move(1);
      case "k":
      case "ArrowLeft":
        return this.move(-1);
    }
  }

  // -- rendering ---------------------------------------------------------------

  render(): void {
    this.root.replaceChildren(
      this.renderHeader(),
      ...this.renderBanners(),
      ...(this.detail && !this.loadFailed ? [this.renderCard(this.detail)] : []),
      el("footer", { id: "hotkeys" }, [
        "a accept · r reject · u unsure · c confident · z undo · arrows navigate",
      ]),
    );
  }

  private renderHeader(): HTMLElement {
    const input = el("input", {
      id: "annotator",
      value: this.annotator,
    }) as HTMLInputElement;
    input.value = this.annotator;
    input.addEventListener("input", () => {
      this.annotator = input.value;
    });
    const s = this.stats;
    const statsLine = s
      ? `${s.decided} decided · ${s.pending} pending of ${s.total}` +
        ` · accept ${s.counts.accept} / reject ${s.counts.reject} / unsure ${s.counts.unsure}` +
        ` · confidence ${(s.confidence_rate * 100).toFixed(0)}%`
      : "";
    return el("header", {}, [
      el("h1", {}, ["alignment review"]),
      el("label", {}, ["annotator ", input]),
      el("section", { id: "stats" }, [statsLine]),
      el("a", { id: "export", href: this.client.exportUrl, download: "accepted.tsv" }, [
        "download accepted pairs",
      ]),
    ]);
  }

  private renderBanners(): HTMLElement[] {
    const banners: HTMLElement[] = [];
    if (this.loadFailed) {
      const retry = el("button", { id: "retry" }, ["retry"]);
      retry.addEventListener("click", () => void this.load());
      banners.push(
        el("div", { id: "load-error", class: "banner" }, [
          "service unreachable ",
          retry,
        ]),
      );
      return banners;
    }
    if (this.inlineError) {
      banners.push(
        el("div", { id: "error", class: "banner" }, [this.inlineError]),
      );
    }
    const allDone =
      this.items.length === 0 ||
      this.items.every((it) => it.status === "decided");
    if (allDone) {
      banners.push(el("div", { id: "all-reviewed" }, ["all reviewed"]));
    }
    return banners;
  }

  private renderCard(detail: PairDetail): HTMLElement {
    const item = this.currentItem();
    const status = item?.status ?? detail.status;
    const chip = detail.decision
      ? el("span", { id: "decision-chip", class: `chip ${detail.decision.decision}` }, [
          `${detail.decision.decision} by ${detail.decision.annotator}` +
            (detail.decision.confident ? " (confident)" : ""),
        ])
      : el("span", { id: "decision-chip", class: "chip pending" }, ["pending"]);

    const blocks = [
      { name: "attributes", cls: "attr-row", a: detail.a.attributes, b: detail.b.attributes },
      { name: "neighbors", cls: "nei-row", a: detail.a.neighbors, b: detail.b.neighbors },
    ];
    const tbody = el("tbody");
    for (const block of blocks) {
      tbody.append(
        el("tr", { class: "block-header" }, [
          el("th", { colspan: "2" }, [block.name]),
        ]),
      );
      const n = Math.max(block.a.length, block.b.length);
      for (let i = 0; i < n; i++) {
        tbody.append(
          el("tr", { class: block.cls }, [
            featureCell(block.a[i]),
            featureCell(block.b[i]),
          ]),
        );
      }
    }
    const table = el("table", { id: "explanation" }, [
      el("thead", {}, [
        el("tr", {}, [
          el("th", { class: "side-a" }, [detail.labels.a]),
          el("th", { class: "side-b" }, [detail.labels.b]),
        ]),
      ]),
      tbody,
    ]);

    const controls = el("div", { id: "controls" });
    for (const d of ["accept", "reject", "unsure"] as Decision[]) {
      const btn = el("button", { "data-decision": d }, [`${d} (${d[0]})`]);
      btn.addEventListener("click", () => void this.decide(d));
      controls.append(btn);
    }
    const confident = el("input", {
      type: "checkbox",
      id: "confident",
    }) as HTMLInputElement;
    confident.checked = this.confidentNext;
    confident.addEventListener("change", () => {
      this.confidentNext = confident.checked;
    });
    const undoBtn = el("button", { id: "undo" }, ["undo (z)"]);
    undoBtn.addEventListener("click", () => void this.undo());
    controls.append(el("label", {}, [confident, " confident (c)"]), undoBtn);

    return el("section", { id: "card", "data-pair": detail.pair_id }, [
      el("div", { id: "queue-pos" }, [
        `pair ${this.idx + 1} / ${this.items.length}`,
      ]),
      el("div", { id: "summary" }, [
        el("span", { class: "label-a" }, [detail.labels.a]),
        " ↔ ",
        el("span", { class: "label-b" }, [detail.labels.b]),
        el("span", { id: "score", title: String(detail.score) }, [
          detail.score.toFixed(3),
        ]),
        el("span", { id: "status", class: `chip ${status}` }, [status]),
        chip,
      ]),
      table,
      controls,
    ]);
  }
}
