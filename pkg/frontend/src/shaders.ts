/**
 * WebGL2 programs. The fragment shader is generated with the same constants
 * as the CPU reference in shading.ts, so the two paths implement identical
 * equations (Schlick Fresnel with the specular map as f0, GGX, height
 * correlated Smith, inverse-square falloff, gamma-2.2 sRGB output).
 */

import { COS_EPS, FOV_DEG, GAMMA, PLANE_DISTANCE, ROUGHNESS_MIN } from "./shading.js";

export const VERTEX_SHADER = `#version 300 es
in vec2 a_pos;
out vec2 v_uv;
void main() {
  v_uv = a_pos * 0.5 + 0.5;
  gl_Position = vec4(a_pos, 0.0, 1.0);
}
`;

export function fragmentShader(): string {
  return `#version 300 es
precision highp float;

uniform sampler2D u_diffuse;
uniform sampler2D u_specular;
uniform sampler2D u_roughness;
uniform sampler2D u_normal;
uniform sampler2D u_height;
uniform vec3 u_light;
uniform float u_intensity;
uniform int u_alphaSquared;  // 1: alpha = roughness^2, 0: alpha = roughness
uniform int u_channel;       // 0 rendered, 1 diffuse, 2 normal, 3 roughness, 4 specular, 5 height
uniform vec2 u_resolution;

in vec2 v_uv;
out vec4 o_color;

const float PI = 3.141592653589793;
const float COS_EPS = ${COS_EPS.toExponential()};
const float ROUGHNESS_MIN = ${ROUGHNESS_MIN};
const float GAMMA = ${GAMMA};
const float FOV_DEG = ${FOV_DEG}.0;
const float PLANE_DISTANCE = ${PLANE_DISTANCE};

float ggxNdf(float nDotH, float alpha) {
  float c = clamp(nDotH, 0.0, 1.0);
  float a2 = alpha * alpha;
  float denom = c * c * (a2 - 1.0) + 1.0;
  return a2 / (PI * denom * denom);
}

float fresnelSchlick(float cosTheta, float f0) {
  float c = clamp(cosTheta, 0.0, 1.0);
  return f0 + (1.0 - f0) * pow(1.0 - c, 5.0);
}

float smithLambda(float cosTheta, float alpha) {
  float c = clamp(cosTheta, COS_EPS, 1.0);
  float tan2 = (1.0 - c * c) / (c * c);
  return 0.5 * (sqrt(1.0 + alpha * alpha * tan2) - 1.0);
}

float smithG(float nDotL, float nDotV, float alpha) {
  return 1.0 / (1.0 + smithLambda(nDotL, alpha) + smithLambda(nDotV, alpha));
}

vec3 linearToSrgb(vec3 x) {
  vec3 c = clamp(x, 0.0, 1.0);
  return pow(c, vec3(1.0 / GAMMA));
}

void main() {
  vec3 diffuse = texture(u_diffuse, v_uv).rgb;
  float specular = texture(u_specular, v_uv).r;
  float roughness = texture(u_roughness, v_uv).r;
  vec3 normalEnc = texture(u_normal, v_uv).rgb;
  float heightEnc = texture(u_height, v_uv).r;

  if (u_channel == 1) { o_color = vec4(diffuse, 1.0); return; }
  if (u_channel == 2) { o_color = vec4(normalEnc, 1.0); return; }
  if (u_channel == 3) { o_color = vec4(vec3(roughness), 1.0); return; }
  if (u_channel == 4) { o_color = vec4(vec3(specular), 1.0); return; }
  if (u_channel == 5) { o_color = vec4(vec3(heightEnc), 1.0); return; }

  float halfW = PLANE_DISTANCE * tan(radians(FOV_DEG) * 0.5);
  float halfH = halfW * u_resolution.y / u_resolution.x;
  vec3 p = vec3((v_uv.x * 2.0 - 1.0) * halfW, (v_uv.y * 2.0 - 1.0) * halfH, -PLANE_DISTANCE);

  vec3 n = normalize(normalEnc * 2.0 - 1.0);
  vec3 v = normalize(-p);
  vec3 toL = u_light - p;
  float distL = length(toL);
  vec3 l = toL / distL;
  vec3 h = normalize(l + v);

  float nDotL = max(dot(n, l), 0.0);
  float nDotV = max(dot(n, v), 0.0);
  float nDotH = clamp(dot(n, h), 0.0, 1.0);
  float vDotH = clamp(dot(v, h), 0.0, 1.0);

  float alphaRaw = (u_alphaSquared == 1) ? roughness * roughness : roughness;
  float alpha = max(alphaRaw, ROUGHNESS_MIN * ROUGHNESS_MIN);
  float dTerm = ggxNdf(nDotH, alpha);
  float fTerm = fresnelSchlick(vDotH, specular);
  float gTerm = smithG(max(nDotL, COS_EPS), max(nDotV, COS_EPS), alpha);
  float denom = max(4.0 * nDotL * nDotV, COS_EPS);
  float specLobe = dTerm * fTerm * gTerm / denom;
  float falloff = nDotL * u_intensity / (distL * distL);
  vec3 radiance = (diffuse / PI + vec3(specLobe)) * falloff;
  o_color = vec4(linearToSrgb(radiance), 1.0);
}
`;
}
