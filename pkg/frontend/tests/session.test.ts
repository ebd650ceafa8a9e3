import { describe, expect, it, vi } from "vitest";

import type { FaceupApi, HallucinationResponse, Point } from "../src/api.js";
import { EditorSession } from "../src/session.js";

const K = 17;

function makeResponse(tag: string, landmarks?: Point[]): HallucinationResponse {
  return {
    hr_png_base64: `png-${tag}`,
    stages: ["s32", "s64", `png-${tag}`],
    landmarks: landmarks ?? Array.from({ length: K }, (_, i) => [i * 2, i * 3] as Point),
    ckpt: "test.ckpt",
  };
}

class FakeApi implements FaceupApi {
  editCalls: Array<{ landmarks: Point[]; stages: number[] }> = [];
  private editCount = 0;
  /** when set, edit() resolution is held until release() is called */
  hold = false;
  private pending: Array<() => void> = [];

  async modelInfo() {
    return { K, ckpt: "test.ckpt", version: "0" };
  }

  async hallucinate(): Promise<HallucinationResponse> {
    return makeResponse("base");
  }

  async edit(_lr: string, landmarks: Point[], stages: number[]): Promise<HallucinationResponse> {
    this.editCalls.push({ landmarks: landmarks.map((p) => [...p] as Point), stages });
    if (this.hold) {
      await new Promise<void>((resolve) => this.pending.push(resolve));
    }
    this.editCount += 1;
    return makeResponse(`edit${this.editCount}`, landmarks);
  }

  release(): void {
    const pending = this.pending;
    this.pending = [];
    for (const p of pending) p();
  }
}

describe("EditorSession", () => {
  it("loads with exactly K draggable points", async () => {
    const session = await EditorSession.load(new FakeApi(), "lr");
    expect(session.landmarkCount).toBe(K);
    expect(session.historyDepth).toBe(1);
  });

  it("drag then undo restores the pre-drag response", async () => {
    const session = await EditorSession.load(new FakeApi(), "lr");
    const before = session.current.response.hr_png_base64;
    session.moveLandmark(12, [64, 90]);
    await session.applyEdit();
    expect(session.current.response.hr_png_base64).not.toBe(before);
    expect(session.undo()).toBe(true);
    expect(session.current.response.hr_png_base64).toBe(before);
    expect(session.landmarks).toEqual(session.current.landmarks);
  });

  it("undo at the initial state is refused", async () => {
    const session = await EditorSession.load(new FakeApi(), "lr");
    expect(session.undo()).toBe(false);
    expect(session.historyDepth).toBe(1);
  });

  it("supports undo through several states", async () => {
    const session = await EditorSession.load(new FakeApi(), "lr");
    const states = [session.current.response.hr_png_base64];
    for (let i = 0; i < 3; i++) {
      session.moveLandmark(i, [10 + i, 20 + i]);
      await session.applyEdit();
      states.push(session.current.response.hr_png_base64);
    }
    for (let i = states.length - 2; i >= 0; i--) {
      expect(session.undo()).toBe(true);
      expect(session.current.response.hr_png_base64).toBe(states[i]);
    }
  });

  it("ignores out-of-range indices with a warning", async () => {
    const session = await EditorSession.load(new FakeApi(), "lr");
    const warn = vi.spyOn(console, "warn").mockImplementation(() => {});
    expect(session.moveLandmark(K, [0, 0])).toBe(false);
    expect(session.moveLandmark(-1, [0, 0])).toBe(false);
    expect(warn).toHaveBeenCalledTimes(2);
    warn.mockRestore();
    expect(session.landmarks).toEqual(session.current.landmarks);
  });

  it("a zero-pixel drag produces a request body equal to the previous one", async () => {
    const api = new FakeApi();
    const session = await EditorSession.load(api, "lr");
    session.moveLandmark(5, [40, 40]);
    await session.applyEdit();
    session.moveLandmark(5, [40, 40]); // same position again
    await session.applyEdit();
    expect(api.editCalls.length).toBe(2);
    expect(api.editCalls[1]).toEqual(api.editCalls[0]);
  });

  it("coalesces applies issued while a request is in flight", async () => {
    const api = new FakeApi();
    const session = await EditorSession.load(api, "lr");
    api.hold = true;
    session.moveLandmark(0, [1, 1]);
    const first = session.applyEdit();
    session.moveLandmark(0, [2, 2]);
    const second = session.applyEdit();
    session.moveLandmark(0, [3, 3]);
    const third = session.applyEdit();
    expect(api.editCalls.length).toBe(1); // only the first went out
    api.hold = false;
    api.release();
    await Promise.all([first, second, third]);
    // intermediate state [2,2] was coalesced away
    expect(api.editCalls.length).toBe(2);
    expect(api.editCalls[1].landmarks[0]).toEqual([3, 3]);
    expect(session.current.landmarks[0]).toEqual([3, 3]);
  });
});
