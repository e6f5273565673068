/**
 * Page bootstrap: reads ?bundle=<url>, loads it, and wires the UI. Load or
 * schema failures land in the error banner; the render loop never starts on
 * a broken bundle.
 */

import { BundleError, resolveRelative } from "./manifest.js";
import { CHANNELS, Channel, fetchBundle, LoadedBundle, MaterialViewer } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(message: string): void {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message;
  banner.style.display = "block";
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const bundleUrl = params.get("bundle");
  if (!bundleUrl) {
    showError("no bundle: open as ?bundle=<path-to-manifest.json>");
    return;
  }
  const canvas = el<HTMLCanvasElement>("view");
  let viewer: MaterialViewer;
  try {
    viewer = new MaterialViewer(canvas);
  } catch (err) {
    showError(String(err));
    return;
  }

  let root: LoadedBundle;
  try {
    root = await fetchBundle(bundleUrl);
  } catch (err) {
    showError(err instanceof BundleError ? `bundle error: ${err.message}` : String(err));
    return;
  }
  viewer.setBundle(root);
  el<HTMLDivElement>("hud").style.display = "block";

  // Channel selection on number keys 1..6 and clickable label.
  const channelLabel = el<HTMLSpanElement>("channel");
  const setChannel = (c: Channel) => {
    viewer.setChannel(c);
    channelLabel.textContent = c;
  };
  window.addEventListener("keydown", (event) => {
    const index = Number(event.key) - 1;
    if (index >= 0 && index < CHANNELS.length) setChannel(CHANNELS[index]);
  });

  // Pointer drag moves the light on a hemisphere above the plane.
  let dragging = false;
  const updateLight = (event: PointerEvent) => {
    const rect = canvas.getBoundingClientRect();
    viewer.setLightFromPointer(
      (event.clientX - rect.left) / rect.width,
      (event.clientY - rect.top) / rect.height
    );
  };
  canvas.addEventListener("pointerdown", (event) => {
    dragging = true;
    updateLight(event);
  });
  window.addEventListener("pointermove", (event) => dragging && updateLight(event));
  window.addEventListener("pointerup", () => (dragging = false));

  // Seed realizations: dropdown hidden unless the manifest lists them.
  const seedSelect = el<HTMLSelectElement>("seed");
  if (root.manifest.seeds?.length) {
    const options = [{ seed: root.manifest.seed, path: "" }, ...root.manifest.seeds];
    for (const entry of options) {
      const option = document.createElement("option");
      option.value = entry.path;
      option.textContent = `seed ${entry.seed}`;
      seedSelect.appendChild(option);
    }
    seedSelect.style.display = "inline";
    seedSelect.addEventListener("change", async () => {
      try {
        const bundle = seedSelect.value
          ? await fetchBundle(resolveRelative(bundleUrl, seedSelect.value))
          : root;
        viewer.setBundle(bundle);
      } catch (err) {
        showError(String(err));
      }
    });
  }

  // Interpolation sequence scrubber.
  const slider = el<HTMLInputElement>("sequence");
  const tLabel = el<HTMLSpanElement>("t-value");
  if (root.manifest.sequence?.length) {
    const frames = root.manifest.sequence;
    slider.max = String(frames.length - 1);
    slider.style.display = "inline";
    tLabel.style.display = "inline";
    const cache = new Map<number, LoadedBundle>();
    slider.addEventListener("input", async () => {
      const index = Number(slider.value);
      tLabel.textContent = `t=${frames[index].t.toFixed(2)}`;
      try {
        let bundle = cache.get(index);
        if (!bundle) {
          bundle = await fetchBundle(resolveRelative(bundleUrl, frames[index].path));
          cache.set(index, bundle);
        }
        viewer.setBundle(bundle);
      } catch (err) {
        showError(String(err));
      }
    });
  }
}

boot().catch((err) => showError(String(err)));
