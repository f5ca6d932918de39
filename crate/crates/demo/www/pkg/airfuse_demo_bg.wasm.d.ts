/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_fit_variogram: (a: number, b: number) => [number, number, number, number];
export const demo_idw: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_idw_loo_rmse: (a: number, b: number) => [number, number, number];
export const demo_kriging: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_model_output: (a: number) => [number, number];
export const demo_n_cols: (a: number) => number;
export const demo_n_rows: (a: number) => number;
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_sites: (a: number) => [number, number];
export const demo_truth: (a: number) => [number, number];
export const demo_variogram: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
