import { DEFAULT_DIM, HASH_MODEL, loadBackend } from "./embedding.js";
import { createApp, DEFAULT_BATCH_CAP } from "./server.js";

function intEnv(name: string, fallback: number): number {
  const raw = process.env[name];
  if (!raw) return fallback;
  const value = Number.parseInt(raw, 10);
  if (!Number.isFinite(value) || value <= 0) {
    throw new Error(`${name} must be a positive integer, got ${raw}`);
  }
  return value;
}

const port = intEnv("EMBED_PORT", 8230);
const dim = intEnv("EMBED_DIM", DEFAULT_DIM);
const batchCap = intEnv("EMBED_BATCH_CAP", DEFAULT_BATCH_CAP);
const model = process.env.EMBED_MODEL || HASH_MODEL;

const backendPromise = loadBackend(model, dim);
backendPromise.then(
  (b) => console.log(`embed-shim ready: model=${b.model} dim=${b.dim}`),
  (e) => console.error(`embed-shim backend failed to load: ${e.message}`)
);

const app = createApp(backendPromise, { batchCap });
app.listen(port, () => {
  console.log(`embed-shim listening on :${port}`);
});
