/**
 * WebGL2 point-splat viewer: screen-aligned splats sized by local density,
 * colored by the active overlay. Selection and label edits live in
 * ViewState; the viewer only draws.
 */

import { ScanPoints, TaxonomyInfo } from "./api.js";
import { viridis } from "./colormap.js";
import { CameraPose } from "./lasso.js";
import { OverlayMode } from "./viewstate.js";

const VERTEX_SHADER = `#version 300 es
layout(location = 0) in vec3 position;
layout(location = 1) in vec3 color;
layout(location = 2) in float flags;
uniform mat4 viewProjection;
uniform float splatSize;
out vec3 vColor;
out float vFlags;
void main() {
  gl_Position = viewProjection * vec4(position, 1.0);
  gl_PointSize = splatSize / max(gl_Position.w, 0.05);
  vColor = color;
  vFlags = flags;
}`;

const FRAGMENT_SHADER = `#version 300 es
precision highp float;
in vec3 vColor;
in float vFlags;
out vec4 fragColor;
void main() {
  vec2 offset = gl_PointCoord - vec2(0.5);
  if (dot(offset, offset) > 0.25) discard;  // round splats
  vec3 color = vFlags > 0.5 ? mix(vColor, vec3(1.0, 0.3, 0.1), 0.6) : vColor;
  fragColor = vec4(color, 1.0);
}`;

function compile(gl: WebGL2RenderingContext, kind: number, source: string) {
  const shader = gl.createShader(kind)!;
  gl.shaderSource(shader, source);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
  }
  return shader;
}

export class SplatViewer {
  private gl: WebGL2RenderingContext;
  private program: WebGLProgram;
  private buffers: {
    position: WebGLBuffer;
    color: WebGLBuffer;
    flags: WebGLBuffer;
  };
  private pointCount = 0;
  private splatSize = 8;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2");
    if (!gl) throw new Error("WebGL2 unavailable");
    this.gl = gl;
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERTEX_SHADER));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAGMENT_SHADER));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(gl.getProgramInfoLog(program) ?? "link failed");
    }
    this.program = program;
    this.buffers = {
      position: gl.createBuffer()!,
      color: gl.createBuffer()!,
      flags: gl.createBuffer()!,
    };
    gl.enable(gl.DEPTH_TEST);
  }

  setPoints(points: ScanPoints): void {
    this.pointCount = points.count;
    // splat size scales with density: target a few pixels per point at the
    // median depth of a human-sized scan
    this.splatSize = Math.max(
      3,
      Math.min(18, 900 / Math.sqrt(points.count)),
    );
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffers.position);
    gl.bufferData(gl.ARRAY_BUFFER, points.positions, gl.STATIC_DRAW);
  }

  /** Per-point color from the overlay mode; never mutates the inputs. */
  setOverlay(
    mode: OverlayMode,
    points: ScanPoints,
    taxonomy: TaxonomyInfo,
    labels: Int32Array | null,
    attention: Float64Array | null,
  ): void {
    const colors = new Float32Array(points.count * 3);
    if (mode === "labels" && labels) {
      const palette = taxonomy.classes.map((name) => taxonomy.palette[name]);
      for (let i = 0; i < points.count; i++) {
        const rgb = palette[labels[i]] ?? [128, 128, 128];
        colors[3 * i] = rgb[0] / 255;
        colors[3 * i + 1] = rgb[1] / 255;
        colors[3 * i + 2] = rgb[2] / 255;
      }
    } else if (mode === "attention" && attention) {
      for (let i = 0; i < points.count; i++) {
        const rgb = viridis(attention[i]);
        colors[3 * i] = rgb[0];
        colors[3 * i + 1] = rgb[1];
        colors[3 * i + 2] = rgb[2];
      }
    } else {
      colors.set(points.colors);
    }
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffers.color);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.STATIC_DRAW);
  }

  setHighlight(selection: number[]): void {
    const flags = new Float32Array(this.pointCount);
    for (const index of selection) flags[index] = 1;
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffers.flags);
    gl.bufferData(gl.ARRAY_BUFFER, flags, gl.STATIC_DRAW);
  }

  render(camera: CameraPose): void {
    const gl = this.gl;
    const { width, height } = this.canvas;
    gl.viewport(0, 0, width, height);
    gl.clearColor(0.09, 0.09, 0.12, 1);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    if (this.pointCount === 0) return;
    gl.useProgram(this.program);
    const matrix = viewProjection(camera, width / height);
    gl.uniformMatrix4fv(
      gl.getUniformLocation(this.program, "viewProjection"),
      false,
      matrix,
    );
    gl.uniform1f(
      gl.getUniformLocation(this.program, "splatSize"),
      this.splatSize,
    );
    const bind = (buffer: WebGLBuffer, location: number, size: number) => {
      gl.bindBuffer(gl.ARRAY_BUFFER, buffer);
      gl.enableVertexAttribArray(location);
      gl.vertexAttribPointer(location, size, gl.FLOAT, false, 0, 0);
    };
    bind(this.buffers.position, 0, 3);
    bind(this.buffers.color, 1, 3);
    bind(this.buffers.flags, 2, 1);
    gl.drawArrays(gl.POINTS, 0, this.pointCount);
  }
}

function viewProjection(camera: CameraPose, aspect: number): Float32Array {
  const [ex, ey, ez] = camera.eye;
  const f = normalize3(
    camera.target[0] - ex,
    camera.target[1] - ey,
    camera.target[2] - ez,
  );
  const r = normalize3(
    f[1] * camera.up[2] - f[2] * camera.up[1],
    f[2] * camera.up[0] - f[0] * camera.up[2],
    f[0] * camera.up[1] - f[1] * camera.up[0],
  );
  const u = [
    r[1] * f[2] - r[2] * f[1],
    r[2] * f[0] - r[0] * f[2],
    r[0] * f[1] - r[1] * f[0],
  ];
  const view = [
    r[0], u[0], -f[0], 0,
    r[1], u[1], -f[1], 0,
    r[2], u[2], -f[2], 0,
    -(r[0] * ex + r[1] * ey + r[2] * ez),
    -(u[0] * ex + u[1] * ey + u[2] * ez),
    f[0] * ex + f[1] * ey + f[2] * ez,
    1,
  ];
  const fov = (camera.fovYDegrees * Math.PI) / 180;
  const focal = 1 / Math.tan(fov / 2);
  const near = camera.near;
  const far = 100;
  const proj = [
    focal / aspect, 0, 0, 0,
    0, focal, 0, 0,
    0, 0, (far + near) / (near - far), -1,
    0, 0, (2 * far * near) / (near - far), 0,
  ];
  return multiply4(proj, view);
}

function normalize3(x: number, y: number, z: number): number[] {
  const n = Math.hypot(x, y, z);
  return [x / n, y / n, z / n];
}

function multiply4(a: number[], b: number[]): Float32Array {
  const out = new Float32Array(16);
  for (let col = 0; col < 4; col++) {
    for (let row = 0; row < 4; row++) {
      let sum = 0;
      for (let k = 0; k < 4; k++) sum += a[k * 4 + row] * b[col * 4 + k];
      out[col * 4 + row] = sum;
    }
  }
  return out;
}
