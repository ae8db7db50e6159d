/**
 * Typed client for the annotation service.
 *
 * The wire contract: labels are 1-based class ids in JSON; the binary
 * points stream is a little-endian uint32 point count followed by nine
 * float32 values (x,y,z,r,g,b,nx,ny,nz) per point.
 */

export interface TaxonomyInfo {
  classes: string[];
  palette: Record<string, [number, number, number]>;
  merge3: Record<string, string>;
  num_classes: number;
}

export interface SegmentResult {
  labels: Int32Array; // 0-based
  confidence: Float64Array;
}

export interface RefinementReport {
  target_iou_before: number;
  target_iou_after: number;
  suite_miou_before: number | null;
  suite_miou_after: number | null;
  epochs: number;
  lambdas: Record<string, number>;
  trainable_layers: string[];
  weight_delta_norm?: number;
}

export interface ModelStatus {
  checkpoint_hash: string;
  refinement_count: number;
  last_suite_miou: number | null;
}

export interface ScanPoints {
  count: number;
  positions: Float32Array;
  colors: Float32Array;
  normals: Float32Array;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function expectOk(response: Response): Promise<Response> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      detail = body.detail ?? detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return response;
}

export function decodePoints(buffer: ArrayBuffer): ScanPoints {
  const view = new DataView(buffer);
  const count = view.getUint32(0, true);
  const interleaved = new Float32Array(buffer, 4, count * 9);
  const positions = new Float32Array(count * 3);
  const colors = new Float32Array(count * 3);
  const normals = new Float32Array(count * 3);
  for (let i = 0; i < count; i++) {
    for (let c = 0; c < 3; c++) {
      positions[3 * i + c] = interleaved[9 * i + c];
      colors[3 * i + c] = interleaved[9 * i + 3 + c];
      normals[3 * i + c] = interleaved[9 * i + 6 + c];
    }
  }
  return { count, positions, colors, normals };
}

export class AnnotationClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async getJson(path: string): Promise<any> {
    const response = await this.fetchImpl(this.baseUrl + path);
    return (await expectOk(response)).json();
  }

  private async postJson(path: string, body: unknown): Promise<any> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return (await expectOk(response)).json();
  }

  async health(): Promise<boolean> {
    const doc = await this.getJson("/health");
    return doc.status === "ok";
  }

  async taxonomy(): Promise<TaxonomyInfo> {
    return this.getJson("/taxonomy");
  }

  async uploadScan(
    ply: Blob | Uint8Array,
    meta: { garments: number[]; body?: unknown; labels?: number[] },
  ): Promise<string> {
    const form = new FormData();
    const blob =
      ply instanceof Blob
        ? ply
        : new Blob([ply as unknown as BlobPart], {
            type: "application/octet-stream",
          });
    form.append("scan", blob, "scan.ply");
    form.append("meta", JSON.stringify(meta));
    const response = await this.fetchImpl(this.baseUrl + "/scans", {
      method: "POST",
      body: form,
    });
    const doc = await (await expectOk(response)).json();
    return doc.id;
  }

  async fetchPoints(scanId: string): Promise<ScanPoints> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/scans/${scanId}/points`,
    );
    const buffer = await (await expectOk(response)).arrayBuffer();
    return decodePoints(buffer);
  }

  async segment(scanId: string, restrict = true): Promise<SegmentResult> {
    const doc = await this.postJson(`/scans/${scanId}/segment`, { restrict });
    const labels = Int32Array.from(doc.labels as number[], (v) => v - 1);
    return { labels, confidence: Float64Array.from(doc.confidence) };
  }

  /** Post one correction batch: indices get the 0-based class. */
  async correctLabels(
    scanId: string,
    indices: number[],
    classId: number,
  ): Promise<number> {
    const doc = await this.postJson(`/scans/${scanId}/labels`, {
      indices,
      class_id: classId + 1,
    });
    return doc.pending_corrections as number;
  }

  /** Replace the scan's whole label field (clears pending corrections). */
  async replaceLabels(scanId: string, labels: Int32Array): Promise<void> {
    await this.postJson(`/scans/${scanId}/labels`, {
      labels: Array.from(labels, (v) => v + 1),
    });
  }

  /** Min-max-normalized codebook similarity for one class. */
  async attentionMap(scanId: string, className: string): Promise<Float64Array> {
    const doc = await this.getJson(
      `/scans/${scanId}/attention?cls=${encodeURIComponent(className)}`,
    );
    return Float64Array.from(doc.scores as number[]);
  }

  async refine(
    scanId: string,
    options: {
      lambdas?: Record<string, number>;
      layers?: string[];
      epochs?: number;
    } = {},
  ): Promise<RefinementReport> {
    return this.postJson("/refine", { scan_id: scanId, ...options });
  }

  async resetModel(): Promise<void> {
    await this.postJson("/model/reset", {});
  }

  async modelStatus(): Promise<ModelStatus> {
    return this.getJson("/model/status");
  }
}
