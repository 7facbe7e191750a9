/* tslint:disable */
/* eslint-disable */

/**
 * A simulated scene and the most recent separation of it.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Separated estimate `n`; empty before the first separation.
     */
    estimate(n: number): Float32Array;
    /**
     * True image of source `n` at the reference microphone.
     */
    image(n: number): Float32Array;
    /**
     * Mixture at the reference microphone.
     */
    mixture(): Float32Array;
    n_bins(): number;
    n_sources(): number;
    /**
     * Three tetrahedral subarrays in a 6 x 4 m room with 3 or 5 sources,
     * 8 kHz, with a short diffuse tail.
     */
    constructor(n_sources: number, duration_s: number, seed: bigint);
    sample_rate(): number;
    /**
     * Separates with `method` (full, single, distributed, independent) and
     * returns a JSON summary: cost trace, timings and SDR improvements.
     */
    separate(method: string, iterations: number, seed: bigint): string;
    /**
     * Log-magnitude spectrogram of `which` ("mixture", "image" or
     * "estimate", with index `n`), frame-major, scaled to [0, 1] over an
     * 80 dB range. The bin count is [`Demo::n_bins`].
     */
    spectrogram(which: string, n: number): Float32Array;
}

/**
 * Builds block-diagonal SCM families over the partition `sizes` (comma
 * separated). Blocks listed in `broken` (comma separated, zero based) get
 * generic SCMs; the rest are jointly diagonalizable by construction.
 * Returns JSON with the per-block and assembled defects and verdicts.
 */
export function explore_joint_diag(sizes: string, broken: string, n_src: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_estimate: (a: number, b: number) => [number, number];
    readonly demo_image: (a: number, b: number) => [number, number];
    readonly demo_mixture: (a: number) => [number, number];
    readonly demo_n_bins: (a: number) => number;
    readonly demo_n_sources: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly demo_sample_rate: (a: number) => number;
    readonly demo_separate: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly demo_spectrogram: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly explore_joint_diag: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
