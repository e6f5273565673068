/**
 * Bundle manifest parsing and validation.
 *
 * The viewer reads the exporter's manifest schema verbatim (schema 1) plus
 * two optional viewer lists: `seeds` (alternate realizations of the same
 * material) and `sequence` (ordered interpolation frames with t values).
 * Validation failures surface as BundleError so the UI can show a banner
 * instead of crashing.
 */

export const SUPPORTED_SCHEMA = 1;

export const MAP_NAMES = ["diffuse", "specular", "roughness", "normal", "height"] as const;
export type MapName = (typeof MAP_NAMES)[number];

export interface MapEntry {
  file: string;
  sha256: string;
  range?: [number, number]; // present on height maps in png16 bundles
}

export interface SeedEntry {
  seed: number;
  path: string; // manifest path relative to this manifest
}

export interface SequenceEntry {
  t: number;
  path: string;
}

export interface BundleManifest {
  schema: number;
  id: string;
  parents: string[];
  seed: number;
  region: { origin: [number, number]; size: [number, number] };
  format: "png16" | "exr";
  maps: Record<MapName, MapEntry>;
  render: { alpha_mode: "squared" | "linear"; fov_deg: number };
  seeds?: SeedEntry[];
  sequence?: SequenceEntry[];
}

export class BundleError extends Error {}

function fail(message: string): never {
  throw new BundleError(message);
}

export function parseManifest(json: unknown): BundleManifest {
  if (typeof json !== "object" || json === null) fail("manifest is not an object");
  const m = json as Record<string, unknown>;
  if (m.schema !== SUPPORTED_SCHEMA) {
    fail(`unsupported manifest schema ${String(m.schema)} (viewer supports ${SUPPORTED_SCHEMA})`);
  }
  const maps = m.maps as Record<string, MapEntry> | undefined;
  if (!maps) fail("manifest has no maps section");
  for (const name of MAP_NAMES) {
    const entry = maps[name];
    if (!entry || typeof entry.file !== "string" || typeof entry.sha256 !== "string") {
      fail(`manifest is missing map entry '${name}'`);
    }
  }
  const render = m.render as BundleManifest["render"] | undefined;
  if (!render || (render.alpha_mode !== "squared" && render.alpha_mode !== "linear")) {
    fail("manifest render block is missing or has an unknown alpha_mode");
  }
  if (m.format !== "png16" && m.format !== "exr") fail(`unsupported map format ${String(m.format)}`);
  if (m.format === "exr") fail("the browser viewer reads png16 bundles; re-export with --format png16");

  const seeds = (m.seeds as SeedEntry[] | undefined)?.map((entry, i) => {
    if (typeof entry.seed !== "number" || typeof entry.path !== "string") {
      fail(`seeds[${i}] must have numeric seed and string path`);
    }
    return { seed: entry.seed, path: entry.path };
  });
  const sequence = (m.sequence as SequenceEntry[] | undefined)?.map((entry, i) => {
    if (typeof entry.t !== "number" || typeof entry.path !== "string") {
      fail(`sequence[${i}] must have numeric t and string path`);
    }
    return { t: entry.t, path: entry.path };
  });
  return {
    schema: m.schema as number,
    id: String(m.id ?? ""),
    parents: (m.parents as string[]) ?? [],
    seed: Number(m.seed ?? 0),
    region: (m.region as BundleManifest["region"]) ?? { origin: [0, 0], size: [0, 0] },
    format: m.format,
    maps: maps as BundleManifest["maps"],
    render,
    seeds,
    sequence,
  };
}

/** Resolves a map/seed/sequence path against the manifest's own URL. */
export function resolveRelative(manifestUrl: string, relative: string): string {
  const base = manifestUrl.slice(0, manifestUrl.lastIndexOf("/") + 1);
  return base + relative;
}
