/**
 * Cook-Torrance shading, mirroring the exporter's renderer: GGX distribution,
 * height-correlated Smith masking, Schlick Fresnel with the specular-albedo
 * map as f0, inverse-square point-light falloff, gamma-2.2 sRGB output.
 *
 * Geometry: camera at the origin looking down -z, plane centered at
 * (0, 0, -1), x right, y up, 45 degree horizontal field of view. The same
 * constants feed the GLSL program (shaders.ts) and this CPU reference, which
 * the parity tests compare against the exporter's own renders.
 */

import type { DecodedImage } from "./png.js";

export const FOV_DEG = 45;
export const PLANE_DISTANCE = 1.0;
export const COS_EPS = 1e-6;
export const ROUGHNESS_MIN = 0.01;
export const GAMMA = 2.2;
/** Flash intensity: pi * 0.85^2.2 (white Lambertian center hits sRGB 0.85). */
export const FLASH_INTENSITY = Math.PI * Math.pow(0.85, GAMMA);
/** Intensity used for distance-2 relight inspection, 4x flash. */
export const RELIGHT_INTENSITY = 4 * FLASH_INTENSITY;

export type AlphaMode = "squared" | "linear";

export interface MaterialTextures {
  width: number;
  height: number;
  diffuse: Float32Array; // rgb interleaved
  specular: Float32Array; // single channel
  roughness: Float32Array; // single channel
  normal: Float32Array; // rgb interleaved, encoded 0.5 (n + 1)
}

export function texturesFromImages(images: Record<string, DecodedImage>): MaterialTextures {
  const d = images.diffuse;
  const grab1 = (img: DecodedImage) => {
    if (img.channels === 1) return img.data;
    const out = new Float32Array(img.width * img.height);
    for (let i = 0; i < out.length; i++) out[i] = img.data[i * img.channels];
    return out;
  };
  return {
    width: d.width,
    height: d.height,
    diffuse: d.data,
    specular: grab1(images.specular),
    roughness: grab1(images.roughness),
    normal: images.normal.data,
  };
}

export function fresnelSchlick(cosTheta: number, f0: number): number {
  const c = Math.min(Math.max(cosTheta, 0), 1);
  return f0 + (1 - f0) * Math.pow(1 - c, 5);
}

export function ggxNdf(nDotH: number, alpha: number): number {
  const c = Math.min(Math.max(nDotH, 0), 1);
  const a2 = alpha * alpha;
  const denom = c * c * (a2 - 1) + 1;
  return a2 / (Math.PI * denom * denom);
}

function smithLambda(cosTheta: number, alpha: number): number {
  const c = Math.min(Math.max(cosTheta, COS_EPS), 1);
  const tan2 = (1 - c * c) / (c * c);
  return 0.5 * (Math.sqrt(1 + alpha * alpha * tan2) - 1);
}

export function smithG(nDotL: number, nDotV: number, alpha: number): number {
  return 1 / (1 + smithLambda(nDotL, alpha) + smithLambda(nDotV, alpha));
}

export function linearToSrgb(x: number): number {
  const c = Math.min(Math.max(x, 0), 1);
  return c <= 0 ? 0 : Math.pow(c, 1 / GAMMA);
}

export interface ShadePoint {
  diffuse: [number, number, number];
  specular: number;
  roughness: number;
  normal: [number, number, number];
  position: [number, number, number];
}

/** Linear radiance at one surface point for a point light at `lightPos`. */
export function shadePoint(
  p: ShadePoint,
  lightPos: [number, number, number],
  intensity: number,
  alphaMode: AlphaMode
): [number, number, number] {
  const [px, py, pz] = p.position;
  const viewLen = Math.hypot(px, py, pz);
  const v: [number, number, number] = [-px / viewLen, -py / viewLen, -pz / viewLen];
  const lx = lightPos[0] - px;
  const ly = lightPos[1] - py;
  const lz = lightPos[2] - pz;
  const distL = Math.hypot(lx, ly, lz);
  const l: [number, number, number] = [lx / distL, ly / distL, lz / distL];
  const hx = l[0] + v[0];
  const hy = l[1] + v[1];
  const hz = l[2] + v[2];
  const hLen = Math.hypot(hx, hy, hz);
  const h: [number, number, number] = [hx / hLen, hy / hLen, hz / hLen];

  const n = p.normal;
  const nDotL = Math.max(n[0] * l[0] + n[1] * l[1] + n[2] * l[2], 0);
  const nDotV = Math.max(n[0] * v[0] + n[1] * v[1] + n[2] * v[2], 0);
  const nDotH = Math.min(Math.max(n[0] * h[0] + n[1] * h[1] + n[2] * h[2], 0), 1);
  const vDotH = Math.min(Math.max(v[0] * h[0] + v[1] * h[1] + v[2] * h[2], 0), 1);

  const alphaRaw = alphaMode === "squared" ? p.roughness * p.roughness : p.roughness;
  const alpha = Math.max(alphaRaw, ROUGHNESS_MIN * ROUGHNESS_MIN);
  const dTerm = ggxNdf(nDotH, alpha);
  const fTerm = fresnelSchlick(vDotH, p.specular);
  const gTerm = smithG(Math.max(nDotL, COS_EPS), Math.max(nDotV, COS_EPS), alpha);
  const denom = Math.max(4 * nDotL * nDotV, COS_EPS);
  const specLobe = (dTerm * fTerm * gTerm) / denom;
  const falloff = (nDotL * intensity) / (distL * distL);
  return [
    (p.diffuse[0] / Math.PI + specLobe) * falloff,
    (p.diffuse[1] / Math.PI + specLobe) * falloff,
    (p.diffuse[2] / Math.PI + specLobe) * falloff,
  ];
}

export function planePosition(
  i: number,
  j: number,
  width: number,
  height: number
): [number, number, number] {
  const halfW = PLANE_DISTANCE * Math.tan((FOV_DEG * Math.PI) / 360);
  const halfH = (halfW * height) / width;
  const x = ((2 * (j + 0.5)) / width - 1) * halfW;
  const y = (1 - (2 * (i + 0.5)) / height) * halfH;
  return [x, y, -PLANE_DISTANCE];
}

/**
 * CPU reference render of a full map set under one point light; returns
 * sRGB-encoded rgb rows. This is the image the WebGL program reproduces.
 */
export function renderImage(
  maps: MaterialTextures,
  lightPos: [number, number, number],
  intensity: number,
  alphaMode: AlphaMode
): Float32Array {
  const { width, height } = maps;
  const out = new Float32Array(width * height * 3);
  for (let i = 0; i < height; i++) {
    for (let j = 0; j < width; j++) {
      const idx = i * width + j;
      const normal: [number, number, number] = [
        2 * maps.normal[idx * 3] - 1,
        2 * maps.normal[idx * 3 + 1] - 1,
        2 * maps.normal[idx * 3 + 2] - 1,
      ];
      const len = Math.hypot(normal[0], normal[1], normal[2]) || 1;
      normal[0] /= len;
      normal[1] /= len;
      normal[2] /= len;
      const rgb = shadePoint(
        {
          diffuse: [maps.diffuse[idx * 3], maps.diffuse[idx * 3 + 1], maps.diffuse[idx * 3 + 2]],
          specular: maps.specular[idx],
          roughness: maps.roughness[idx],
          normal,
          position: planePosition(i, j, width, height),
        },
        lightPos,
        intensity,
        alphaMode
      );
      out[idx * 3] = linearToSrgb(rgb[0]);
      out[idx * 3 + 1] = linearToSrgb(rgb[1]);
      out[idx * 3 + 2] = linearToSrgb(rgb[2]);
    }
  }
  return out;
}

/** PSNR in dB between two [0,1] images of equal length. */
export function psnr(a: Float32Array, b: Float32Array): number {
  let sum = 0;
  for (let i = 0; i < a.length; i++) {
    const d = a[i] - b[i];
    sum += d * d;
  }
  const mse = sum / a.length;
  return mse === 0 ? Infinity : -10 * Math.log10(mse);
}
