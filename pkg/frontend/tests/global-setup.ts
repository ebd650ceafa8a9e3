/** Boots a live inference server (tiny random-init model) for integration tests. */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdirSync, rmSync } from "node:fs";
import { fileURLToPath } from "node:url";
import path from "node:path";

export const LIVE_PORT = 8791;
export const LIVE_DIR = path.join(path.dirname(fileURLToPath(import.meta.url)), "..", ".live");

const BOOTSTRAP = `
import sys, torch
from faceup.data import build_dataset
from faceup.generator import ModelConfig, ProgressiveGenerator, save_checkpoint

work = sys.argv[1]
build_dataset(1, seed=3, out_dir=f"{work}/ds")
torch.manual_seed(9)
gen = ProgressiveGenerator(ModelConfig(channels=8, res_blocks=1))
save_checkpoint(f"{work}/model.ckpt", gen)
print("ok")
`;

async function waitForServer(url: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(url);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`server at ${url} did not come up within ${timeoutMs}ms`);
}

let server: ChildProcess | null = null;

export async function setup(): Promise<void> {
  rmSync(LIVE_DIR, { recursive: true, force: true });
  mkdirSync(LIVE_DIR, { recursive: true });
  execFileSync("python3", ["-c", BOOTSTRAP, LIVE_DIR], { stdio: "pipe" });
  server = spawn(
    "python3",
    ["-m", "faceup.cli", "serve", "--ckpt", `${LIVE_DIR}/model.ckpt`, "--port", String(LIVE_PORT)],
    { stdio: "ignore" },
  );
  await waitForServer(`http://127.0.0.1:${LIVE_PORT}/v1/model`, 30_000);
}

export async function teardown(): Promise<void> {
  if (server) server.kill();
}
