/** Page wiring: load a thumbnail, show before/after results, drag landmarks. */

import { HttpFaceupApi } from "./api.js";
import { ResultCanvas, decodePng } from "./canvas.js";
import { diffHeat } from "./diff.js";
import { EditorSession } from "./session.js";

const api = new HttpFaceupApi("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const status = el<HTMLDivElement>("status");
  status.textContent = text;
  status.className = isError ? "status error" : "status";
}

async function fileToBase64(file: File): Promise<string> {
  const buf = new Uint8Array(await file.arrayBuffer());
  let bin = "";
  for (const b of buf) bin += String.fromCharCode(b);
  return btoa(bin);
}

async function drawB64(canvas: HTMLCanvasElement, b64: string): Promise<void> {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const img = await decodePng(b64);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
}

async function renderDiff(beforeB64: string, afterB64: string): Promise<void> {
  const canvas = el<HTMLCanvasElement>("diff");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const [a, b] = await Promise.all([decodePng(beforeB64), decodePng(afterB64)]);
  const w = canvas.width;
  const h = canvas.height;
  const scratch = document.createElement("canvas");
  scratch.width = w;
  scratch.height = h;
  const sctx = scratch.getContext("2d")!;
  sctx.drawImage(a, 0, 0, w, h);
  const beforeData = sctx.getImageData(0, 0, w, h).data;
  sctx.drawImage(b, 0, 0, w, h);
  const afterData = sctx.getImageData(0, 0, w, h).data;
  const out = ctx.createImageData(w, h);
  out.data.set(diffHeat(beforeData, afterData));
  ctx.putImageData(out, 0, 0);
}

async function start(): Promise<void> {
  let session: EditorSession | null = null;
  let view: ResultCanvas | null = null;

  try {
    const info = await api.modelInfo();
    setStatus(`model ${info.ckpt} (K=${info.K})`);
  } catch (err) {
    setStatus(`server unreachable: ${err}`, true);
  }

  async function refresh(): Promise<void> {
    if (!session || !view) return;
    await view.render();
    const prev = session.previous;
    if (prev) await drawB64(el<HTMLCanvasElement>("before"), prev.response.hr_png_base64);
    if (prev && el<HTMLInputElement>("diff-toggle").checked) {
      await renderDiff(prev.response.hr_png_base64, session.current.response.hr_png_base64);
      el<HTMLCanvasElement>("diff").style.display = "block";
    } else {
      el<HTMLCanvasElement>("diff").style.display = "none";
    }
  }

  el<HTMLInputElement>("file").addEventListener("change", async (e) => {
    const input = e.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      setStatus("hallucinating...");
      session = await EditorSession.load(api, await fileToBase64(file));
      view = new ResultCanvas(el<HTMLCanvasElement>("after"), session);
      view.onDragRelease = () => {
        setStatus("applying edit...");
        session!
          .applyEdit()
          .then(() => {
            setStatus(`edit applied (history ${session!.historyDepth})`);
            return refresh();
          })
          .catch((err) => setStatus(`edit failed: ${err}`, true));
      };
      await refresh();
      setStatus(`loaded; drag any of the ${session.landmarkCount} landmarks`);
    } catch (err) {
      setStatus(`load failed: ${err}`, true);
    }
  });

  el<HTMLButtonElement>("undo").addEventListener("click", async () => {
    if (session?.undo()) {
      setStatus(`undone (history ${session.historyDepth})`);
      await refresh();
    }
  });

  el<HTMLInputElement>("diff-toggle").addEventListener("change", refresh);
}

start();
