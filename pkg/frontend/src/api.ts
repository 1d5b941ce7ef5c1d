/**
 * Typed client over the stylesynth HTTP service.
 *
 * Every response is validated against a strict schema; anything the server
 * sends that does not match is surfaced as a SchemaError rather than being
 * coerced. Network failures are retried once, then rethrown for the UI to
 * display.
 */
import { z } from 'zod';

export const HealthSchema = z
  .object({
    status: z.string(),
    corpus_hash: z.string(),
    checkpoint_hash: z.string(),
    config_hash: z.string(),
    mode: z.string(),
    grid: z.array(z.number()).length(3),
    item_count: z.number().int(),
    t_steps: z.number().int(),
  })
  .strict();

export const ItemSchema = z
  .object({
    id: z.string(),
    mode: z.string(),
    grid: z.array(z.number()).length(3),
    data: z.array(z.number()),
    png: z.string(),
  })
  .strict();

export const SearchHitSchema = z.object({ id: z.number().int(), similarity: z.number() }).strict();

export const SearchResponseSchema = z
  .object({
    results: z.array(SearchHitSchema),
    truncated: z.boolean(),
  })
  .strict();

export const MetricsSchema = z
  .object({
    style_mse: z.number(),
    content_mse: z.number(),
    chamfer: z.number(),
  })
  .strict();

const RefOut = z.object({ id: z.union([z.number().int(), z.string()]), weight: z.number() }).strict();

export const GenerateResponseSchema = z
  .object({
    item_id: z.string(),
    png: z.string(),
    data: z.array(z.number()),
    metrics: MetricsSchema,
    request: z
      .object({
        content_refs: z.array(RefOut),
        style_refs: z.array(RefOut),
        lambda: z.number().int().nullable(),
        g_s: z.number().nullable(),
        g_y: z.number().nullable(),
        seed: z.number().int(),
        postprocess: z.boolean(),
      })
      .strict(),
  })
  .strict();

export type Health = z.infer<typeof HealthSchema>;
export type ItemPayload = z.infer<typeof ItemSchema>;
export type SearchHit = z.infer<typeof SearchHitSchema>;
export type SearchResponse = z.infer<typeof SearchResponseSchema>;
export type GenerateResponse = z.infer<typeof GenerateResponseSchema>;

export interface SearchRequest {
  modality: 'content' | 'style';
  query: number | string | number[];
  k?: number;
}

export interface GenerateRequest {
  content_refs: { id: number | string; weight: number }[];
  style_refs: { id: number | string; weight: number }[];
  lambda: number;
  g_s: number;
  g_y: number;
  seed: number;
  postprocess: boolean;
}

export class SchemaError extends Error {
  constructor(endpoint: string, detail: string) {
    super(`response from ${endpoint} violates the wire schema: ${detail}`);
    this.name = 'SchemaError';
  }
}

export class HttpError extends Error {
  constructor(
    endpoint: string,
    public readonly status: number,
    body: string,
  ) {
    super(`${endpoint} failed with status ${status}: ${body}`);
    this.name = 'HttpError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let lastError: unknown;
    for (let attempt = 0; attempt < 2; attempt += 1) {
      try {
        const response = await this.fetchImpl(this.baseUrl + path, init);
        if (!response.ok) {
          throw new HttpError(path, response.status, await response.text());
        }
        return await response.json();
      } catch (error) {
        if (error instanceof HttpError) {
          throw error; // the server answered; retrying will not change it
        }
        lastError = error;
      }
    }
    throw lastError;
  }

  private parse<T>(endpoint: string, schema: z.ZodType<T>, payload: unknown): T {
    const result = schema.safeParse(payload);
    if (!result.success) {
      throw new SchemaError(endpoint, result.error.message);
    }
    return result.data;
  }

  async health(): Promise<Health> {
    return this.parse('/health', HealthSchema, await this.request('/health'));
  }

  async item(id: number | string): Promise<ItemPayload> {
    return this.parse(`/item/${id}.json`, ItemSchema, await this.request(`/item/${id}.json`));
  }

  async search(request: SearchRequest): Promise<SearchResponse> {
    const payload = await this.request('/search', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(request),
    });
    return this.parse('/search', SearchResponseSchema, payload);
  }

  async generate(request: GenerateRequest): Promise<GenerateResponse> {
    const payload = await this.request('/generate', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(request),
    });
    return this.parse('/generate', GenerateResponseSchema, payload);
  }

  async session(id: string): Promise<GenerateResponse> {
    return this.parse(`/session/${id}`, GenerateResponseSchema, await this.request(`/session/${id}`));
  }
}
