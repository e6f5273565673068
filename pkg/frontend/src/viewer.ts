/**
 * WebGL2 material viewer: loads a bundle's maps into float textures and
 * relights it interactively. Pointer drag moves the light on a hemisphere
 * over the plane; number keys 1-6 switch the displayed channel; a dropdown
 * picks alternate seed realizations; a slider scrubs interpolation frames.
 * The viewer never mutates bundles.
 */

import { BundleError, BundleManifest, MAP_NAMES, MapName, parseManifest, resolveRelative } from "./manifest.js";
import { browserInflate, decodePng, DecodedImage } from "./png.js";
import { RELIGHT_INTENSITY } from "./shading.js";
import { fragmentShader, VERTEX_SHADER } from "./shaders.js";

export const CHANNELS = ["rendered", "diffuse", "normal", "roughness", "specular", "height"] as const;
export type Channel = (typeof CHANNELS)[number];

export interface LoadedBundle {
  manifest: BundleManifest;
  manifestUrl: string;
  images: Record<MapName, DecodedImage>;
}

export async function fetchBundle(manifestUrl: string): Promise<LoadedBundle> {
  const response = await fetch(manifestUrl);
  if (!response.ok) throw new BundleError(`cannot fetch manifest: HTTP ${response.status}`);
  let json: unknown;
  try {
    json = await response.json();
  } catch {
    throw new BundleError("manifest is not valid JSON");
  }
  const manifest = parseManifest(json);
  const images = {} as Record<MapName, DecodedImage>;
  for (const name of MAP_NAMES) {
    const url = resolveRelative(manifestUrl, manifest.maps[name].file);
    const fileResponse = await fetch(url);
    if (!fileResponse.ok) throw new BundleError(`missing map file ${manifest.maps[name].file}`);
    const bytes = new Uint8Array(await fileResponse.arrayBuffer());
    images[name] = await decodePng(bytes, browserInflate);
  }
  return { manifest, manifestUrl, images };
}

interface ViewerState {
  channel: Channel;
  light: [number, number, number];
  bundle: LoadedBundle;
}

export class MaterialViewer {
  private gl: WebGL2RenderingContext;
  private program: WebGLProgram;
  private textures = new Map<MapName, WebGLTexture>();
  private state: ViewerState | null = null;
  private uniforms: Record<string, WebGLUniformLocation | null> = {};

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2");
    if (!gl) throw new Error("WebGL2 is required");
    this.gl = gl;
    if (!gl.getExtension("OES_texture_float_linear")) {
      // Float textures still sample with NEAREST; acceptable fallback.
      console.warn("OES_texture_float_linear unavailable; using nearest filtering");
    }
    this.program = this.buildProgram();
    const quad = gl.createBuffer();
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.bufferData(gl.ARRAY_BUFFER, new Float32Array([-1, -1, 3, -1, -1, 3]), gl.STATIC_DRAW);
    const loc = gl.getAttribLocation(this.program, "a_pos");
    gl.enableVertexAttribArray(loc);
    gl.vertexAttribPointer(loc, 2, gl.FLOAT, false, 0, 0);
    for (const name of [
      "u_diffuse", "u_specular", "u_roughness", "u_normal", "u_height",
      "u_light", "u_intensity", "u_alphaSquared", "u_channel", "u_resolution",
    ]) {
      this.uniforms[name] = gl.getUniformLocation(this.program, name);
    }
  }

  private buildProgram(): WebGLProgram {
    const gl = this.gl;
    const compile = (type: number, source: string) => {
      const shader = gl.createShader(type)!;
      gl.shaderSource(shader, source);
      gl.compileShader(shader);
      if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
      }
      return shader;
    };
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl.VERTEX_SHADER, VERTEX_SHADER));
    gl.attachShader(program, compile(gl.FRAGMENT_SHADER, fragmentShader()));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    gl.useProgram(program);
    return program;
  }

  setBundle(bundle: LoadedBundle): void {
    const gl = this.gl;
    for (const tex of this.textures.values()) gl.deleteTexture(tex);
    this.textures.clear();
    for (const name of MAP_NAMES) {
      const image = bundle.images[name];
      const tex = gl.createTexture()!;
      gl.bindTexture(gl.TEXTURE_2D, tex);
      gl.pixelStorei(gl.UNPACK_FLIP_Y_WEBGL, true);
      const rgb = expandToRgba(image);
      gl.texImage2D(
        gl.TEXTURE_2D, 0, gl.RGBA32F, image.width, image.height, 0, gl.RGBA, gl.FLOAT, rgb
      );
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
      this.textures.set(name, tex);
    }
    this.canvas.width = bundle.images.diffuse.width;
    this.canvas.height = bundle.images.diffuse.height;
    this.state = {
      channel: "rendered",
      light: [0, 0, 0], // flash position: at the camera
      bundle,
    };
    this.draw();
  }

  setChannel(channel: Channel): void {
    if (!this.state) return;
    this.state.channel = channel;
    this.draw();
  }

  get channel(): Channel {
    return this.state?.channel ?? "rendered";
  }

  /** Pointer position in [0,1]^2 -> light on a hemisphere over the plane. */
  setLightFromPointer(u: number, v: number): void {
    if (!this.state) return;
    const x = Math.min(Math.max(u * 2 - 1, -1), 1);
    const y = Math.min(Math.max(1 - v * 2, -1), 1);
    const r2 = x * x + y * y;
    const radius = 2.0;
    const z = Math.sqrt(Math.max(1 - Math.min(r2, 0.99), 0.01));
    const scale = radius / Math.hypot(x, y, z);
    this.state.light = [x * scale, y * scale, -1 + z * scale];
    this.draw();
  }

  setLight(light: [number, number, number]): void {
    if (!this.state) return;
    this.state.light = light;
    this.draw();
  }

  draw(): void {
    if (!this.state) return;
    const gl = this.gl;
    const { bundle, channel, light } = this.state;
    gl.viewport(0, 0, this.canvas.width, this.canvas.height);
    gl.useProgram(this.program);
    MAP_NAMES.forEach((name, unit) => {
      gl.activeTexture(gl.TEXTURE0 + unit);
      gl.bindTexture(gl.TEXTURE_2D, this.textures.get(name)!);
      gl.uniform1i(this.uniforms[`u_${name}`], unit);
    });
    gl.uniform3f(this.uniforms.u_light, light[0], light[1], light[2]);
    const flash = light[0] === 0 && light[1] === 0 && light[2] === 0;
    gl.uniform1f(this.uniforms.u_intensity, flash ? RELIGHT_INTENSITY / 4 : RELIGHT_INTENSITY);
    gl.uniform1i(this.uniforms.u_alphaSquared, bundle.manifest.render.alpha_mode === "squared" ? 1 : 0);
    gl.uniform1i(this.uniforms.u_channel, CHANNELS.indexOf(channel));
    gl.uniform2f(this.uniforms.u_resolution, this.canvas.width, this.canvas.height);
    gl.drawArrays(gl.TRIANGLES, 0, 3);
  }
}

function expandToRgba(image: DecodedImage): Float32Array {
  const n = image.width * image.height;
  const out = new Float32Array(n * 4);
  for (let i = 0; i < n; i++) {
    if (image.channels === 3) {
      out[i * 4] = image.data[i * 3];
      out[i * 4 + 1] = image.data[i * 3 + 1];
      out[i * 4 + 2] = image.data[i * 3 + 2];
    } else {
      out[i * 4] = out[i * 4 + 1] = out[i * 4 + 2] = image.data[i];
    }
    out[i * 4 + 3] = 1;
  }
  return out;
}
