import { ApiClient, ApiError, type CategoryInfo, type TransformDto } from "./api";
import { VoxelRenderer } from "./renderer";
import { SessionStore, sliderSpecs, type SessionState } from "./state";

const api = new ApiClient();

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, cls?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function showError(message: string): void {
  const banner = el("div", "banner", message);
  const close = el("button", "banner-close", "×");
  close.onclick = () => banner.remove();
  banner.appendChild(close);
  document.body.appendChild(banner);
}

async function guarded<T>(op: () => Promise<T>): Promise<T | null> {
  try {
    return await op();
  } catch (err) {
    showError(err instanceof ApiError ? err.message : String(err));
    return null;
  }
}

class Pane {
  readonly store = new SessionStore();
  private renderer: VoxelRenderer;
  private sliders: HTMLInputElement[] = [];
  private selectedAnchor: string | null = null;
  private editBusy = false;
  private editQueue: Array<{ anchor: string; transform: TransformDto }> = [];
  private partButtons = new Map<string, HTMLButtonElement>();
  private historyList: HTMLOListElement;
  private resampleCounter = 0;

  constructor(readonly root: HTMLElement, private readonly category: CategoryInfo,
              readonly name: string) {
    root.appendChild(el("h2", "", `session ${name}`));
    const canvas = el("canvas", "viewport");
    root.appendChild(canvas);
    this.renderer = new VoxelRenderer(canvas);
    this.renderer.resize(420, 360);
    canvas.addEventListener("pointerdown", (ev) => this.onPick(ev));

    const controls = el("div", "controls");
    root.appendChild(controls);

    const seedInput = el("input") as HTMLInputElement;
    seedInput.type = "number";
    seedInput.value = String(Math.floor(Math.random() * 10000));
    const genBtn = el("button", "", "Generate");
    genBtn.onclick = () => this.generate(parseInt(seedInput.value, 10));
    const genRow = el("div", "row");
    genRow.append("seed ", seedInput, genBtn);
    controls.appendChild(genRow);

    const partsRow = el("div", "row parts");
    for (const label of category.labels) {
      const btn = el("button", "part", label);
      btn.onclick = () => this.setAnchor(label);
      this.partButtons.set(label, btn);
      partsRow.appendChild(btn);
      const resample = el("button", "resample", "↻");
      resample.title = `resample ${label}`;
      resample.onclick = () => this.resample(label);
      partsRow.appendChild(resample);
    }
    controls.appendChild(partsRow);

    const sliderBox = el("div", "sliders");
    for (const spec of sliderSpecs(category.scale_range, category.translate_range)) {
      const row = el("div", "row");
      const input = el("input") as HTMLInputElement;
      input.type = "range";
      input.min = String(spec.min);
      input.max = String(spec.max);
      input.step = "0.01";
      input.value = String(spec.value);
      input.dataset.key = spec.key;
      const value = el("span", "slider-value", input.value);
      input.oninput = () => { value.textContent = input.value; };
      row.append(el("label", "", spec.key), input, value);
      sliderBox.appendChild(row);
      this.sliders.push(input);
    }
    const applyBtn = el("button", "", "Apply edit to anchor");
    applyBtn.onclick = () => this.commitEdit();
    sliderBox.appendChild(applyBtn);
    controls.appendChild(sliderBox);

    controls.appendChild(el("h3", "", "history"));
    this.historyList = el("ol", "history");
    controls.appendChild(this.historyList);
    const replayBtn = el("button", "", "Replay history");
    replayBtn.onclick = () => this.replay();
    controls.appendChild(replayBtn);

    this.store.subscribe((s) => this.render(s));
  }

  private render(s: SessionState): void {
    this.renderer.setVolume(s.volume, s.anchor + 1);
    const counts = this.store.partCounts();
    this.category.labels.forEach((label, k) => {
      const btn = this.partButtons.get(label)!;
      const empty = (counts[k + 1] ?? 0) === 0;
      btn.disabled = empty;
      btn.title = empty ? `${label} is empty and cannot anchor` : `anchor on ${label}`;
      btn.classList.toggle("anchor", s.anchorLabel === label
        && this.selectedAnchor === null || this.selectedAnchor === label);
    });
    this.historyList.replaceChildren(
      ...s.history.map((h) => el(
        "li", "",
        h.kind === "edit"
          ? `edit ${h.anchor}: s=${h.transform!.scale.map((v) => v.toFixed(2))} t=${h.transform!.translate.map((v) => v.toFixed(1))}`
          : `resample ${h.part} (seed ${h.seed})`,
      )),
    );
  }

  private onPick(ev: PointerEvent): void {
    const hit = this.renderer.pick(ev);
    if (!hit || hit.label === 0) return;
    this.setAnchor(this.category.labels[hit.label - 1]);
  }

  private setAnchor(label: string): void {
    const counts = this.store.partCounts();
    const k = this.category.labels.indexOf(label);
    if ((counts[k + 1] ?? 0) === 0) return; // disabled: empty part cannot anchor
    this.selectedAnchor = label;
    for (const [name, btn] of this.partButtons) {
      btn.classList.toggle("anchor", name === label);
    }
  }

  async generate(seed: number): Promise<void> {
    const res = await guarded(() => api.generate(seed));
    if (!res) return;
    this.selectedAnchor = null;
    this.store.applyServerShape(res.session_id, res.shape, seed);
  }

  private currentTransform(): TransformDto {
    const values = this.sliders.map((s) => parseFloat(s.value));
    return {
      scale: [values[0], values[1], values[2]],
      translate: [values[3], values[4], values[5]],
    };
  }

  private commitEdit(): void {
    const s = this.store.get();
    if (!s) return;
    const anchor = this.selectedAnchor ?? s.anchorLabel;
    this.editQueue.push({ anchor, transform: this.currentTransform() });
    void this.drainEdits();
  }

  /** At most one in-flight edit; later commits wait their turn. */
  private async drainEdits(): Promise<void> {
    if (this.editBusy) return;
    this.editBusy = true;
    try {
      let next;
      while ((next = this.editQueue.shift()) !== undefined) {
        const s = this.store.get();
        if (!s) break;
        const res = await guarded(() => api.edit(s.sessionId, next!.anchor, next!.transform));
        if (res) {
          this.store.applyServerShape(res.session_id, res.shape, s.seed, {
            kind: "edit", anchor: next.anchor, transform: next.transform,
          });
        }
      }
    } finally {
      this.editBusy = false;
    }
  }

  private async resample(label: string): Promise<void> {
    const s = this.store.get();
    if (!s) return;
    const seed = this.resampleCounter++;
    const res = await guarded(() => api.resamplePart(s.sessionId, label, seed));
    if (res) {
      this.store.applyServerShape(res.session_id, res.shape, s.seed, {
        kind: "resample", part: label, seed,
      });
    }
  }

  /** Re-create the session from its seed and re-apply the whole history. */
  private async replay(): Promise<void> {
    const s = this.store.get();
    if (!s || s.seed === null) return;
    const history = [...s.history];
    const fresh = await guarded(() => api.generate(s.seed!));
    if (!fresh) return;
    this.store.applyServerShape(fresh.session_id, fresh.shape, s.seed);
    for (const record of history) {
      const cur = this.store.get()!;
      const res = record.kind === "edit"
        ? await guarded(() => api.edit(cur.sessionId, record.anchor!, record.transform!))
        : await guarded(() => api.resamplePart(cur.sessionId, record.part!, record.seed!));
      if (!res) return;
      this.store.applyServerShape(res.session_id, res.shape, s.seed, record);
    }
  }
}

async function boot(): Promise<void> {
  const category = await guarded(() => api.category());
  if (!category) {
    showError("edit service unreachable; start `partforge serve` first");
    return;
  }
  const app = el("div", "app");
  document.body.appendChild(app);

  const paneA = new Pane(el("section", "pane"), category, "A");
  const paneB = new Pane(el("section", "pane"), category, "B");
  app.append(paneA.root, paneB.root);

  const bar = el("div", "crossover");
  bar.appendChild(el("span", "", "crossover: take from B → "));
  const checks = new Map<string, HTMLInputElement>();
  for (const label of category.labels) {
    const wrap = el("label", "check", label);
    const box = el("input") as HTMLInputElement;
    box.type = "checkbox";
    wrap.prepend(box);
    checks.set(label, box);
    bar.appendChild(wrap);
  }
  const btn = el("button", "", "Crossover into A");
  btn.onclick = async () => {
    const a = paneA.store.get();
    const b = paneB.store.get();
    if (!a || !b) {
      showError("generate a shape in both panes first");
      return;
    }
    const parts = [...checks.entries()].filter(([, c]) => c.checked).map(([l]) => l);
    const res = await guarded(() => api.crossover(a.sessionId, b.sessionId, parts));
    if (res) paneA.store.applyServerShape(res.session_id, res.shape, null);
  };
  bar.appendChild(btn);
  app.appendChild(bar);
}

void boot();
