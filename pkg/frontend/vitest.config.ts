import { defineConfig } from "vitest/config";

// Source modules import each other with explicit .js extensions because the
// compiled output runs unbundled in the browser; strip the extension here so
// vite resolves the .ts sources during tests.
export default defineConfig({
  resolve: {
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
});
