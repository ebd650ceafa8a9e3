/** Typed client for the hallucination/editing HTTP API. */

export type Point = [number, number];

export interface HallucinationResponse {
  hr_png_base64: string;
  stages: string[];
  landmarks: Point[];
  ckpt: string;
}

export interface ModelInfo {
  K: number;
  ckpt: string;
  version: string;
}

export interface FaceupApi {
  modelInfo(): Promise<ModelInfo>;
  hallucinate(lrPngBase64: string, maskPngBase64?: string): Promise<HallucinationResponse>;
  edit(lrPngBase64: string, landmarks: Point[], stages?: number[]): Promise<HallucinationResponse>;
}

export class HttpFaceupApi implements FaceupApi {
  constructor(private baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && body.detail) detail = String(body.detail);
      } catch {
        /* non-JSON error body */
      }
      throw new Error(`${path} failed (${resp.status}): ${detail}`);
    }
    return (await resp.json()) as T;
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/v1/model");
  }

  hallucinate(lrPngBase64: string, maskPngBase64?: string): Promise<HallucinationResponse> {
    const body: Record<string, unknown> = { lr_png_base64: lrPngBase64 };
    if (maskPngBase64 !== undefined) body.mask_png_base64 = maskPngBase64;
    return this.request<HallucinationResponse>("/v1/hallucinate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  edit(lrPngBase64: string, landmarks: Point[], stages: number[] = [1, 2, 3]): Promise<HallucinationResponse> {
    return this.request<HallucinationResponse>("/v1/edit", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ lr_png_base64: lrPngBase64, landmarks, stages }),
    });
  }
}
