import express from "express";
import type { Backend } from "./embedding.js";

export interface ServerOptions {
  batchCap: number;
}

export const DEFAULT_BATCH_CAP = 256;

/**
 * The provider protocol the alignment client speaks:
 *   POST /embed {"texts": [...]} -> {"vectors": [[...], ...], "dim": n}
 *   GET /health -> {"status": "ok", "model": ..., "dim": n}
 * 400 on a bad batch, 503 until the backend finishes loading.
 */
export function createApp(
  backendPromise: Promise<Backend>,
  options: ServerOptions = { batchCap: DEFAULT_BATCH_CAP }
): express.Express {
  let backend: Backend | null = null;
  let loadError: Error | null = null;
  backendPromise.then(
    (b) => (backend = b),
    (e) => (loadError = e instanceof Error ? e : new Error(String(e)))
  );

  // inference is serialized behind this chain; handlers stay stateless
  let queue: Promise<unknown> = Promise.resolve();
  function enqueue<T>(job: () => Promise<T>): Promise<T> {
    const next = queue.then(job);
    queue = next.catch(() => undefined);
    return next;
  }

  const app = express();
  app.use(express.json({ limit: "5mb" }));

  app.get("/health", (_req, res) => {
    if (loadError) {
      res.status(500).json({ status: "error", error: loadError.message });
    } else if (!backend) {
      res.status(503).json({ status: "loading" });
    } else {
      res.json({ status: "ok", model: backend.model, dim: backend.dim });
    }
  });

  app.post("/embed", (req, res) => {
    if (loadError) {
      res.status(500).json({ error: loadError.message });
      return;
    }
    if (!backend) {
      res.status(503).json({ error: "model is loading" });
      return;
    }
    const texts = req.body?.texts;
    if (!Array.isArray(texts) || texts.length === 0) {
      res.status(400).json({ error: "texts must be a non-empty array" });
      return;
    }
    if (texts.length > options.batchCap) {
      res.status(400).json({
        error: `batch of ${texts.length} exceeds cap of ${options.batchCap}`,
      });
      return;
    }
    for (const t of texts) {
      if (typeof t !== "string" || t.trim().length === 0) {
        res.status(400).json({ error: "every text must be a non-empty string" });
        return;
      }
    }
    const ready = backend;
    enqueue(() => ready.embed(texts)).then(
      (vectors) => res.json({ vectors, dim: ready.dim }),
      (e) => res.status(500).json({ error: e instanceof Error ? e.message : String(e) })
    );
  });

  return app;
}
