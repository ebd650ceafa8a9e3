/** Editing session: working landmark set, edit history, request coalescing. */

import type { FaceupApi, HallucinationResponse, Point } from "./api.js";

export interface SessionSnapshot {
  response: HallucinationResponse;
  landmarks: Point[];
}

function clonePoints(points: Point[]): Point[] {
  return points.map((p) => [p[0], p[1]] as Point);
}

export class EditorSession {
  /** Displayed state history; the last entry is the current state. */
  private history: SessionSnapshot[] = [];
  /** Draggable working copy of the landmarks (exactly K points). */
  private working: Point[] = [];

  private inFlight = false;
  private pendingApply = false;
  private waiters: Array<() => void> = [];

  private constructor(
    private api: FaceupApi,
    readonly lrPngBase64: string,
  ) {}

  static async load(api: FaceupApi, lrPngBase64: string): Promise<EditorSession> {
    const session = new EditorSession(api, lrPngBase64);
    const response = await api.hallucinate(lrPngBase64);
    session.history = [{ response, landmarks: clonePoints(response.landmarks) }];
    session.working = clonePoints(response.landmarks);
    return session;
  }

  get current(): SessionSnapshot {
    return this.history[this.history.length - 1];
  }

  get previous(): SessionSnapshot | null {
    return this.history.length > 1 ? this.history[this.history.length - 2] : null;
  }

  get landmarks(): Point[] {
    return clonePoints(this.working);
  }

  get historyDepth(): number {
    return this.history.length;
  }

  get landmarkCount(): number {
    return this.working.length;
  }

  /** Move one working landmark (model coordinates). Out-of-range indices are ignored. */
  moveLandmark(index: number, position: Point): boolean {
    if (index < 0 || index >= this.working.length) {
      console.warn(`landmark index ${index} out of range [0, ${this.working.length})`);
      return false;
    }
    this.working[index] = [position[0], position[1]];
    return true;
  }

  /**
   * Send the working landmarks as an edit. Only one request is in flight
   * at a time; applies issued meanwhile are coalesced into a single
   * trailing request carrying the latest working state.
   */
  applyEdit(stages: number[] = [1, 2, 3]): Promise<void> {
    const done = new Promise<void>((resolve) => this.waiters.push(resolve));
    if (this.inFlight) {
      this.pendingApply = true;
      return done;
    }
    void this.runApply(stages);
    return done;
  }

  private async runApply(stages: number[]): Promise<void> {
    this.inFlight = true;
    try {
      do {
        this.pendingApply = false;
        const landmarks = clonePoints(this.working);
        const response = await this.api.edit(this.lrPngBase64, landmarks, stages);
        this.history.push({ response, landmarks });
      } while (this.pendingApply);
    } finally {
      this.inFlight = false;
      const waiters = this.waiters;
      this.waiters = [];
      for (const w of waiters) w();
    }
  }

  /** Revert to the previous state; returns false at the initial state. */
  undo(): boolean {
    if (this.history.length <= 1) return false;
    this.history.pop();
    this.working = clonePoints(this.current.landmarks);
    return true;
  }
}
