#include <stdio.h>
#include <string.h>
#include "socket_store.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        SsStatus st_ = (call);                                             \
        if (st_ != SS_STATUS_OK) {                                         \
            fprintf(stderr, "%s failed: %d %s\n", #call, (int)st_,         \
                    ss_last_error() ? ss_last_error() : "");               \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(int argc, char **argv) {
    if (argc < 2) return 2;
    SsStore *store = NULL;
    CHECK(ss_store_open(NULL, true, 1, &store));
    CHECK(ss_store_register_specialist(store, "km-lab"));
    CHECK(ss_store_register_specialist(store, "reviewer"));
    char *id = NULL;
    CHECK(ss_store_submit(store, argv[1], &id));
    CHECK(ss_store_start_review(store, id));
    if (ss_store_review(store, id, true, "km-lab") != SS_STATUS_DENIED) return 3;
    CHECK(ss_store_review(store, id, true, "reviewer"));
    char *token = NULL;
    CHECK(ss_store_purchase(store, "c-app", id, &token));

    SsDsa *b = NULL, *a = NULL;
    CHECK(ss_dsa_new(store, "c-app", "dev-b", "B", 2, &b));
    CHECK(ss_dsa_bind(b, "Device_B"));
    CHECK(ss_dsa_new(store, "c-app", "dev-a", "A", 2, &a));
    SsConnection *conn = NULL;
    CHECK(ss_dsa_connect(a, "Device_B", id, token, 2, 10.0, 5.0, &conn));
    if (ss_conn_mode(conn) != SS_MODE_MODULE || ss_conn_paths(conn) != 2) return 4;
    uint32_t copies = 0, got = 0;
    CHECK(ss_dsa_send(a, conn, (const uint8_t *)"hi", 2, &copies));
    CHECK(ss_store_advance_ms(store, 10.0));
    CHECK(ss_dsa_recv(a, conn, &got));
    if (copies != 2 || got != 1) return 5;
    CHECK(ss_dsa_close(a, conn));
    printf("ok %s paths=%u\n", ss_version(), ss_conn_paths(conn));

    ss_conn_free(conn);
    ss_dsa_free(a);
    ss_dsa_free(b);
    ss_string_free(token);
    ss_string_free(id);
    ss_store_free(store);
    return 0;
}
