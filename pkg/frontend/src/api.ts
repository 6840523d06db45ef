/** Thin typed wrappers over the completion service's JSON API. */

import type { Meta, Prompt, SegmentResponse } from "./core.js";

export type FetchLike = typeof fetch;

async function asJson(resp: Response): Promise<any> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new Error(body.error ?? `request failed with status ${resp.status}`);
  }
  return body;
}

export function makeApi(baseUrl: string, fetchImpl: FetchLike = fetch) {
  const url = (path: string) => `${baseUrl.replace(/\/$/, "")}${path}`;
  return {
    async listImages(): Promise<string[]> {
      const body = await asJson(await fetchImpl(url("/images")));
      return body.ids;
    },

    imageUrl(id: string): string {
      return url(`/image/${id}`);
    },

    async meta(id: string): Promise<Meta> {
      return asJson(await fetchImpl(url(`/meta/${id}`)));
    },

    async segment(id: string, prompts: Prompt[]): Promise<SegmentResponse> {
      const resp = await fetchImpl(url("/segment"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ id, prompts }),
      });
      return asJson(resp);
    },
  };
}

export type Api = ReturnType<typeof makeApi>;
