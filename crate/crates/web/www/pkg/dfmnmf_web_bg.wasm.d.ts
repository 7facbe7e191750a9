/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_estimate: (a: number, b: number) => [number, number];
export const demo_image: (a: number, b: number) => [number, number];
export const demo_mixture: (a: number) => [number, number];
export const demo_n_bins: (a: number) => number;
export const demo_n_sources: (a: number) => number;
export const demo_new: (a: number, b: number, c: bigint) => [number, number, number];
export const demo_sample_rate: (a: number) => number;
export const demo_separate: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const demo_spectrogram: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const explore_joint_diag: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
