/**
 * Thin client for the fusedtree command-line tool.
 *
 * All statistics happen in the Python package; this module only moves
 * matrices across the CSV/JSON wire formats and spawns the CLI. Numbers
 * are serialized with the shortest round-trip decimal (JS `toString`),
 * which Python parses back to the identical binary64, so results are
 * bit-equal to driving the CLI by hand.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync, copyFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export type ResponseKind = "gaussian" | "binomial" | "cox";
export type ClinicalKind = "continuous" | "ordinal" | "categorical";
export type Variant = "fused" | "zerofus" | "fulfus";

export interface GaussianResponse {
  kind: "gaussian";
  y: ArrayLike<number>;
}
export interface BinomialResponse {
  kind: "binomial";
  y: ArrayLike<number>;
}
export interface SurvivalResponse {
  kind: "cox";
  time: ArrayLike<number>;
  status: ArrayLike<number>;
}
export type ResponseSpec = GaussianResponse | BinomialResponse | SurvivalResponse;

export interface FitOptions {
  seed?: number;
  folds?: number;
  minNodeSize?: number;
  maxDepth?: number;
  lambda?: number;
  alpha?: number;
  variant?: Variant;
  horizon?: number;
  includeLinear?: boolean;
  clinicalKinds?: ClinicalKind[];
  /** Python interpreter used to run the CLI. */
  python?: string;
  /** Keep the model file here instead of a temp directory. */
  modelPath?: string;
}

export interface PredictOptions {
  horizon?: number;
  output?: "response" | "linear" | "cumhaz";
  python?: string;
}

export interface TreeNodeView {
  nodeId: number;
  depth: number;
  n: number;
  constant: number;
  leafIndex: number | null;
  split?: {
    covariate: number;
    kind: string;
    threshold: number | null;
    leftLevels: number[];
    rightLevels: number[];
  };
}

export interface ModelDocument {
  format_version: number;
  response_kind: ResponseKind;
  tree: { kappa: number; nodes: Record<string, unknown>[] };
  leaf_node_ids: number[];
  c_hat: number[];
  beta_blocks: number[][];
  block_of_leaf: number[];
  removed_nodes: number[];
  penalties: { lambda: number; alpha: number | null };
  [key: string]: unknown;
}

/** Immutable handle to a fitted model; all numbers come from the model file. */
export class BoundModel {
  readonly modelPath: string;
  readonly doc: ModelDocument;

  constructor(modelPath: string) {
    this.modelPath = modelPath;
    this.doc = JSON.parse(readFileSync(modelPath, "utf8")) as ModelDocument;
  }

  get responseKind(): ResponseKind {
    return this.doc.response_kind;
  }

  get nLeaves(): number {
    return this.doc.leaf_node_ids.length;
  }

  get leafIntercepts(): number[] {
    return this.doc.c_hat.slice(0, this.nLeaves);
  }

  /** One column of omics coefficients per retained block. */
  get betaBlocks(): number[][] {
    return this.doc.beta_blocks;
  }

  get penalties(): { lambda: number; alpha: number | null } {
    return this.doc.penalties;
  }

  get removedNodes(): number[] {
    return this.doc.removed_nodes;
  }

  get tree(): TreeNodeView[] {
    return this.doc.tree.nodes.map((raw) => {
      const node = raw as Record<string, any>;
      const view: TreeNodeView = {
        nodeId: node.node_id,
        depth: node.depth,
        n: node.n,
        constant: node.constant,
        leafIndex: node.leaf_index ?? null,
      };
      if (node.split) {
        view.split = {
          covariate: node.split.covariate,
          kind: node.split.kind,
          threshold: node.split.threshold,
          leftLevels: node.split.left_levels,
          rightLevels: node.split.right_levels,
        };
      }
      return view;
    });
  }

  /** Copy the underlying model file (CLI-compatible). */
  save(path: string): void {
    copyFileSync(this.modelPath, path);
  }
}

export class FusedTreeError extends Error {
  /** CLI exit code: 2 usage, 3 data, 4 numerical. */
  readonly code: number;

  constructor(message: string, code: number) {
    super(message);
    this.code = code;
    this.name = "FusedTreeError";
  }
}

function fmt(x: number): string {
  if (!Number.isFinite(x)) {
    throw new FusedTreeError(`non-finite value in input matrix: ${x}`, 3);
  }
  return x.toString();
}

function toMatrix(rows: ArrayLike<ArrayLike<number>>): number[][] {
  const out: number[][] = [];
  for (let i = 0; i < rows.length; i++) {
    out.push(Array.from(rows[i] as ArrayLike<number>));
  }
  return out;
}

export function writeCsv(path: string, header: string[], columns: ArrayLike<number>[]): void {
  const n = columns.length ? columns[0].length : 0;
  for (const col of columns) {
    if (col.length !== n) {
      throw new FusedTreeError("ragged columns in CSV payload", 3);
    }
  }
  const lines = [header.join(",")];
  for (let i = 0; i < n; i++) {
    lines.push(columns.map((c) => fmt(c[i])).join(","));
  }
  writeFileSync(path, lines.join("\n") + "\n");
}

export function readPredictions(path: string): number[] {
  const text = readFileSync(path, "utf8").trim();
  const lines = text.length ? text.split(/\r?\n/) : [];
  if (lines.length === 0 || lines[0] !== "prediction") {
    throw new FusedTreeError(`unexpected predictions header in ${path}`, 3);
  }
  return lines.slice(1).map((s) => Number(s));
}

export function runCli(args: string[], python = "python3"): string {
  try {
    return execFileSync(python, ["-m", "fusedtree", ...args], {
      encoding: "utf8",
      stdio: ["ignore", "pipe", "pipe"],
    });
  } catch (err) {
    const e = err as { status?: number | null; stderr?: string | Buffer };
    const code = typeof e.status === "number" ? e.status : 1;
    const stderr = e.stderr ? e.stderr.toString() : "";
    throw new FusedTreeError(stderr.trim() || `fusedtree exited with code ${code}`, code);
  }
}

interface Frame {
  dir: string;
  dataPath: string;
  omicsPath: string | null;
  clinicalNames: string[];
  omicsNames: string[];
}

function clinicalHeader(q: number): string[] {
  return Array.from({ length: q }, (_, i) => `z${i + 1}`);
}

function omicsHeader(p: number): string[] {
  return Array.from({ length: p }, (_, j) => `g${j + 1}`);
}

function writeFrame(
  dir: string,
  name: string,
  clinical: number[][],
  omics: number[][],
  response: ResponseSpec | null
): Frame {
  const n = clinical.length;
  if (omics.length !== n) {
    throw new FusedTreeError(
      `clinical has ${n} rows but omics has ${omics.length}`,
      3
    );
  }
  const q = n ? clinical[0].length : 0;
  const p = n ? omics[0].length : 0;
  const clinicalNames = clinicalHeader(q);
  const omicsNames = omicsHeader(p);
  const header = [...clinicalNames];
  const cols: ArrayLike<number>[] = [];
  for (let j = 0; j < q; j++) {
    cols.push(clinical.map((r) => r[j]));
  }
  if (response) {
    if (response.kind === "cox") {
      header.push("t", "status");
      cols.push(Array.from(response.time), Array.from(response.status));
    } else {
      header.push("y");
      cols.push(Array.from(response.y));
    }
  }
  const dataPath = join(dir, `${name}.csv`);
  writeCsv(dataPath, header, cols);
  let omicsPath: string | null = null;
  if (p > 0) {
    omicsPath = join(dir, `${name}_omics.csv`);
    writeCsv(
      omicsPath,
      omicsNames,
      omicsNames.map((_, j) => omics.map((r) => r[j]))
    );
  }
  return { dir, dataPath, omicsPath, clinicalNames, omicsNames };
}

function responseFlags(response: ResponseSpec): string[] {
  if (response.kind === "cox") {
    return ["--kind", "cox", "--time-col", "t", "--status-col", "status"];
  }
  return ["--kind", response.kind, "--response", "y"];
}

function clinicalFlag(names: string[], kinds?: ClinicalKind[]): string {
  return names
    .map((name, i) => `${name}:${kinds?.[i] ?? "continuous"}`)
    .join(",");
}

/** Fit a model; matrices are dense row-major arrays. */
export function fit(
  clinical: ArrayLike<ArrayLike<number>>,
  omics: ArrayLike<ArrayLike<number>>,
  response: ResponseSpec,
  options: FitOptions = {}
): BoundModel {
  const dir = mkdtempSync(join(tmpdir(), "fusedtree-"));
  const frame = writeFrame(dir, "train", toMatrix(clinical), toMatrix(omics), response);
  const modelPath = options.modelPath ?? join(dir, "model.json");
  const args = [
    "fit",
    "--data", frame.dataPath,
    ...responseFlags(response),
    "--clinical", clinicalFlag(frame.clinicalNames, options.clinicalKinds),
    "--model-out", modelPath,
    "--report-out", join(dir, "report.txt"),
    "--seed", String(options.seed ?? 0),
    "--folds", String(options.folds ?? 5),
    "--min-node-size", String(options.minNodeSize ?? 30),
    "--max-depth", String(options.maxDepth ?? 6),
    "--variant", options.variant ?? "fused",
  ];
  if (frame.omicsPath) args.push("--omics-file", frame.omicsPath);
  if (options.lambda !== undefined) args.push("--lambda", fmt(options.lambda));
  if (options.alpha !== undefined) args.push("--alpha", fmt(options.alpha));
  if (options.horizon !== undefined) args.push("--horizon", fmt(options.horizon));
  if (options.includeLinear === false) args.push("--no-linear");
  runCli(args, options.python);
  return new BoundModel(modelPath);
}

/** Predict new rows with a fitted or loaded model. */
export function predict(
  model: BoundModel,
  clinical: ArrayLike<ArrayLike<number>>,
  omics: ArrayLike<ArrayLike<number>>,
  options: PredictOptions = {}
): number[] {
  const dir = mkdtempSync(join(tmpdir(), "fusedtree-"));
  try {
    const doc = model.doc as Record<string, any>;
    // Column names come from the model file so empty inputs still
    // carry the schema the CLI expects.
    const clinNames: string[] = doc.clinical_schema?.names ?? [];
    const omicsNames: string[] = doc.omics_names ?? [];
    const Z = toMatrix(clinical);
    const X = toMatrix(omics);
    if (Z.length !== X.length) {
      throw new FusedTreeError(
        `clinical has ${Z.length} rows but omics has ${X.length}`,
        3
      );
    }
    if (Z.length && Z[0].length !== clinNames.length) {
      throw new FusedTreeError(
        `model expects ${clinNames.length} clinical columns, got ${Z[0].length}`,
        3
      );
    }
    const dataPath = join(dir, "data.csv");
    writeCsv(dataPath, clinNames, clinNames.map((_, j) => Z.map((r) => r[j])));
    let omicsPath: string | null = null;
    if (omicsNames.length) {
      if (Z.length && X[0].length !== omicsNames.length) {
        throw new FusedTreeError(
          `model expects ${omicsNames.length} omics columns, got ${X[0].length}`,
          3
        );
      }
      omicsPath = join(dir, "omics.csv");
      writeCsv(omicsPath, omicsNames, omicsNames.map((_, j) => X.map((r) => r[j])));
    }
    const out = join(dir, "preds.csv");
    const args = [
      "predict",
      "--model", model.modelPath,
      "--data", dataPath,
      "--out", out,
      "--output", options.output ?? "response",
    ];
    if (omicsPath) args.push("--omics-file", omicsPath);
    if (options.horizon !== undefined) args.push("--horizon", fmt(options.horizon));
    runCli(args, options.python);
    return readPredictions(out);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

export interface TuneResult {
  lambda: number;
  alpha: number | null;
  cvObjective: number | null;
  nLeaves: number;
}

/** Tune penalties only; reports the selected values. */
export function tune(
  clinical: ArrayLike<ArrayLike<number>>,
  omics: ArrayLike<ArrayLike<number>>,
  response: ResponseSpec,
  options: FitOptions = {}
): TuneResult {
  const dir = mkdtempSync(join(tmpdir(), "fusedtree-"));
  try {
    const frame = writeFrame(dir, "train", toMatrix(clinical), toMatrix(omics), response);
    const out = join(dir, "tune.json");
    const args = [
      "tune",
      "--data", frame.dataPath,
      ...responseFlags(response),
      "--clinical", clinicalFlag(frame.clinicalNames, options.clinicalKinds),
      "--out", out,
      "--seed", String(options.seed ?? 0),
      "--folds", String(options.folds ?? 5),
      "--min-node-size", String(options.minNodeSize ?? 30),
      "--max-depth", String(options.maxDepth ?? 6),
      "--variant", options.variant ?? "fused",
    ];
    if (frame.omicsPath) args.push("--omics-file", frame.omicsPath);
    if (options.includeLinear === false) args.push("--no-linear");
    runCli(args, options.python);
    const doc = JSON.parse(readFileSync(out, "utf8"));
    return {
      lambda: doc.lambda,
      alpha: doc.alpha,
      cvObjective: doc.cv_objective,
      nLeaves: doc.n_leaves,
    };
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

export interface NodeTestRow {
  step: number;
  removedNode: number | null;
  pValue: number | null;
  removedSet: number[];
  lambda: number;
  alpha: number | null;
  metric: string;
  performance: number;
  partiallyEvaluated: boolean;
  selected: boolean;
}

export interface NodeTestResult {
  rows: NodeTestRow[];
  selected: BoundModel;
}

/** Run the backward node-removal search on train/test data. */
export function nodetest(
  model: BoundModel,
  train: { clinical: number[][]; omics: number[][]; response: ResponseSpec },
  test: { clinical: number[][]; omics: number[][]; response: ResponseSpec },
  options: { permutations?: number; seed?: number; python?: string } = {}
): NodeTestResult {
  const dir = mkdtempSync(join(tmpdir(), "fusedtree-"));
  const trainFrame = writeFrame(dir, "train", train.clinical, train.omics, train.response);
  const testFrame = writeFrame(dir, "test", test.clinical, test.omics, test.response);
  const report = join(dir, "path.csv");
  const selectedPath = join(dir, "selected.json");
  const args = [
    "nodetest",
    "--model", model.modelPath,
    "--train", trainFrame.dataPath,
    "--test", testFrame.dataPath,
    "--permutations", String(options.permutations ?? 1999),
    "--seed", String(options.seed ?? 0),
    "--report-out", report,
    "--selected-out", selectedPath,
  ];
  if (trainFrame.omicsPath) args.push("--train-omics-file", trainFrame.omicsPath);
  if (testFrame.omicsPath) args.push("--test-omics-file", testFrame.omicsPath);
  runCli(args, options.python);
  const lines = readFileSync(report, "utf8").trim().split(/\r?\n/).slice(1);
  const rows: NodeTestRow[] = lines.map((line) => {
    const f = line.split(",");
    return {
      step: Number(f[0]),
      removedNode: f[1] === "" ? null : Number(f[1]),
      pValue: f[2] === "" ? null : Number(f[2]),
      removedSet: f[3] === "" ? [] : f[3].split(";").map(Number),
      lambda: Number(f[4]),
      alpha: f[5] === "inf" ? null : Number(f[5]),
      metric: f[6],
      performance: Number(f[7]),
      partiallyEvaluated: f[8] === "1",
      selected: f[9] === "1",
    };
  });
  return { rows, selected: new BoundModel(selectedPath) };
}

/** Load a CLI-produced model file. */
export function loadModel(path: string): BoundModel {
  return new BoundModel(path);
}
