/** Canvas wiring: image + patch grid + probability overlay + controls. */

import { makeApi } from "./api.js";
import {
  Meta,
  Session,
  SessionState,
  pointToPatch,
  renderOverlay,
} from "./core.js";

const SCALE = 12; // screen pixels per image pixel

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function loadBitmap(url: string): Promise<ImageBitmap> {
  const resp = await fetch(url);
  if (!resp.ok) throw new Error(`image fetch failed (${resp.status})`);
  return createImageBitmap(await resp.blob());
}

function draw(
  ctx: CanvasRenderingContext2D,
  bitmap: ImageBitmap,
  meta: Meta,
  state: SessionState,
  threshold: number,
  opacity: number,
): void {
  const { h, w, patch } = meta;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, w * SCALE, h * SCALE);
  ctx.drawImage(bitmap, 0, 0, w * SCALE, h * SCALE);

  if (state.probs) {
    const overlay = renderOverlay(state.probs, meta, threshold, opacity);
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const a = overlay.alpha[y * w + x];
        if (a > 0) {
          ctx.fillStyle = `rgba(220, 40, 40, ${a})`;
          ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
        }
        if (overlay.contour[y * w + x]) {
          ctx.fillStyle = "rgba(255, 255, 0, 0.9)";
          ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
        }
      }
    }
  }

  ctx.strokeStyle = "rgba(255, 255, 255, 0.35)";
  ctx.lineWidth = 1;
  for (let i = 0; i <= w / patch; i++) {
    ctx.beginPath();
    ctx.moveTo(i * patch * SCALE, 0);
    ctx.lineTo(i * patch * SCALE, h * SCALE);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(0, i * patch * SCALE);
    ctx.lineTo(w * SCALE, i * patch * SCALE);
    ctx.stroke();
  }

  // prompt markers
  for (const p of state.history) {
    const g = w / patch;
    const cx = ((p.patch % g) + 0.5) * patch * SCALE;
    const cy = (Math.floor(p.patch / g) + 0.5) * patch * SCALE;
    ctx.fillStyle = p.label === "fg" ? "#2ecc40" : "#0074d9";
    ctx.beginPath();
    ctx.arc(cx, cy, SCALE / 2, 0, 2 * Math.PI);
    ctx.fill();
  }
}

async function start(): Promise<void> {
  const api = makeApi("");
  const canvas = el<HTMLCanvasElement>("canvas");
  const picker = el<HTMLSelectElement>("image-picker");
  const undoBtn = el<HTMLButtonElement>("undo");
  const thresholdSlider = el<HTMLInputElement>("threshold");
  const opacitySlider = el<HTMLInputElement>("opacity");
  const status = el<HTMLDivElement>("status");
  const ctx = canvas.getContext("2d")!;

  let session: Session | null = null;
  let bitmap: ImageBitmap | null = null;
  let meta: Meta | null = null;

  const redraw = () => {
    if (session && bitmap && meta) {
      draw(ctx, bitmap, meta, session.state,
        Number(thresholdSlider.value), Number(opacitySlider.value));
      status.textContent = session.state.error
        ? `error: ${session.state.error} (click to retry)`
        : `${session.state.history.length} prompt(s)`;
    }
  };

  const open = async (id: string) => {
    try {
      meta = await api.meta(id);
      bitmap = await loadBitmap(api.imageUrl(id));
      canvas.width = meta.w * SCALE;
      canvas.height = meta.h * SCALE;
      session = new Session(id, meta, (imageId, prompts) =>
        api.segment(imageId, prompts));
      session.onChange(redraw);
      redraw();
    } catch (err) {
      status.textContent = `error: ${err}`;
    }
  };

  canvas.addEventListener("click", (ev) => {
    if (!session || !meta) return;
    const rect = canvas.getBoundingClientRect();
    const x = (ev.clientX - rect.left) / SCALE;
    const y = (ev.clientY - rect.top) / SCALE;
    const patch = pointToPatch(meta, x, y);
    if (patch !== null) {
      void session.click(patch, ev.shiftKey || ev.altKey ? "bg" : "fg");
    }
  });

  undoBtn.addEventListener("click", () => void session?.undo());
  thresholdSlider.addEventListener("input", redraw);
  opacitySlider.addEventListener("input", redraw);
  picker.addEventListener("change", () => void open(picker.value));

  const ids = await api.listImages();
  for (const id of ids) {
    const option = document.createElement("option");
    option.value = id;
    option.textContent = id;
    picker.appendChild(option);
  }
  if (ids.length > 0) await open(ids[0]);
  else status.textContent = "no images on the server";
}

void start();
